//! C ABI over the troubleshooting engine.
//!
//! Handles are opaque. Requests and responses are JSON strings using the same
//! shapes as the HTTP API. Strings returned through `out_json` are owned by
//! the caller and must be released with `ts_string_free`. On failure the
//! status code says what went wrong and `ts_last_error` returns a message
//! that stays valid until the next call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use serde::de::DeserializeOwned;
use serde::Serialize;
use troubleshoot::engine::Engine;
use troubleshoot::error::Error;

/// A loaded model, optionally with its training corpus.
pub struct TsEngine {
    inner: Engine,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    InvalidRequest = 4,
    UnknownLabel = 5,
    UnknownEnvironment = 6,
    NotFound = 7,
    ParseError = 8,
    UnsupportedVersion = 9,
    IoError = 10,
    TransportError = 11,
    InternalError = 12,
    Panic = 13,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: impl Into<Vec<u8>>) {
    let mut bytes = message.into();
    bytes.retain(|&b| b != 0);
    let c = CString::new(bytes).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn status_of(e: &Error) -> TsStatus {
    match e {
        Error::Argument(_) | Error::Config(_) => TsStatus::InvalidArgument,
        Error::Validation(_) => TsStatus::InvalidRequest,
        Error::Domain { .. } => TsStatus::UnknownLabel,
        Error::UnknownEnvironment { .. } => TsStatus::UnknownEnvironment,
        Error::Lookup(_) => TsStatus::NotFound,
        Error::Parse { .. } => TsStatus::ParseError,
        Error::UnsupportedVersion { .. } => TsStatus::UnsupportedVersion,
        Error::Io { .. } | Error::Ingest(_) | Error::EmptyCorpus { .. } | Error::DuplicateRecordId(_) => {
            TsStatus::IoError
        }
        Error::Transport { .. } => TsStatus::TransportError,
        Error::Consistency(_) | Error::OracleRefused(_) => TsStatus::InternalError,
    }
}

struct Failure(TsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), format!("{}: {e}", e.code()))
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> TsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            TsStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("panic inside troubleshoot library");
            TsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(TsStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(TsStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn engine_arg<'a>(p: *const TsEngine) -> Result<&'a Engine, Failure> {
    p.as_ref()
        .map(|e| &e.inner)
        .ok_or_else(|| Failure(TsStatus::NullArgument, "engine is null".into()))
}

fn parse_request<T: DeserializeOwned>(json: &str) -> Result<T, Failure> {
    serde_json::from_str(json).map_err(|e| Failure(TsStatus::InvalidRequest, format!("bad_request: {e}")))
}

unsafe fn write_json<T: Serialize>(value: &T, out: *mut *mut c_char) -> Result<(), Failure> {
    let text = serde_json::to_string(value).map_err(|e| Failure(TsStatus::InternalError, e.to_string()))?;
    let c = CString::new(text).map_err(|e| Failure(TsStatus::InternalError, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn check_out<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(TsStatus::NullArgument, "output pointer is null".into()));
    }
    *out = ptr::null_mut();
    Ok(())
}

/// Load a model artifact. `corpus_path` may be null; when given, exemplar
/// retrieval and `record_id` recourse become available.
///
/// # Safety
/// Path arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_engine_open(
    model_path: *const c_char,
    corpus_path: *const c_char,
    out: *mut *mut TsEngine,
) -> TsStatus {
    guard(|| {
        check_out(out)?;
        let model = str_arg(model_path, "model_path")?;
        let corpus = if corpus_path.is_null() {
            None
        } else {
            Some(str_arg(corpus_path, "corpus_path")?)
        };
        let inner = Engine::open(Path::new(model), corpus.map(Path::new))?;
        *out = Box::into_raw(Box::new(TsEngine { inner }));
        Ok(())
    })
}

/// # Safety
/// `engine` must come from `ts_engine_open` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ts_engine_free(engine: *mut TsEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Schema version, domain sizes, environments and fit metadata.
///
/// # Safety
/// `engine` must be a live handle; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_model_info_json(engine: *const TsEngine, out_json: *mut *mut c_char) -> TsStatus {
    guard(|| {
        check_out(out_json)?;
        write_json(&engine_arg(engine)?.info(), out_json)
    })
}

/// `{text, top_k?}` to ranked causes.
///
/// # Safety
/// As for `ts_model_info_json`; `request_json` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ts_diagnose_json(
    engine: *const TsEngine,
    request_json: *const c_char,
    out_json: *mut *mut c_char,
) -> TsStatus {
    guard(|| {
        check_out(out_json)?;
        let e = engine_arg(engine)?;
        let req = parse_request(str_arg(request_json, "request_json")?)?;
        write_json(&e.diagnose(&req)?, out_json)
    })
}

/// `{text, top_k?, generate?, k_retrieve?}` to causes plus solutions.
///
/// # Safety
/// As for `ts_diagnose_json`.
#[no_mangle]
pub unsafe extern "C" fn ts_solve_json(
    engine: *const TsEngine,
    request_json: *const c_char,
    out_json: *mut *mut c_char,
) -> TsStatus {
    guard(|| {
        check_out(out_json)?;
        let e = engine_arg(engine)?;
        let req = parse_request(str_arg(request_json, "request_json")?)?;
        write_json(&e.solve(&req)?, out_json)
    })
}

/// `{text, target_env | z_marginal, top_k?}` to transported solutions.
///
/// # Safety
/// As for `ts_diagnose_json`.
#[no_mangle]
pub unsafe extern "C" fn ts_transport_json(
    engine: *const TsEngine,
    request_json: *const c_char,
    out_json: *mut *mut c_char,
) -> TsStatus {
    guard(|| {
        check_out(out_json)?;
        let e = engine_arg(engine)?;
        let req = parse_request(str_arg(request_json, "request_json")?)?;
        write_json(&e.transport(&req)?, out_json)
    })
}

/// `{factual | record_id, alt_text, mode?, samples?, seed?}`; `default_seed`
/// applies when the request has no seed.
///
/// # Safety
/// As for `ts_diagnose_json`.
#[no_mangle]
pub unsafe extern "C" fn ts_recourse_json(
    engine: *const TsEngine,
    request_json: *const c_char,
    default_seed: u64,
    out_json: *mut *mut c_char,
) -> TsStatus {
    guard(|| {
        check_out(out_json)?;
        let e = engine_arg(engine)?;
        let req = parse_request(str_arg(request_json, "request_json")?)?;
        write_json(&e.recourse(&req, default_seed)?, out_json)
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ts_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the most recent failure on this thread; empty after success.
#[no_mangle]
pub extern "C" fn ts_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn ts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
