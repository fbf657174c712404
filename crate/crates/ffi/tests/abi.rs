use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use troubleshoot::corpus::{Corpus, RoxRecord};
use troubleshoot::model::write_file;
use troubleshoot::pipeline::{train, TrainConfig};
use troubleshoot_ffi::*;

fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let obs = ["brake cable frayed", "door seal leaking oil", "display flickers at night"];
    let sol = ["replace brake cable", "fit new door seal", "reseat display connector"];
    let records = (0..60)
        .map(|i| RoxRecord {
            record_id: format!("r{i}"),
            environment: if i % 2 == 0 { "A" } else { "B" }.into(),
            subsystem: format!("sub{}", i % 2),
            root_cause: format!("cause{}", i % 3),
            observation: obs[i % 3].into(),
            solution: sol[i % 3].into(),
        })
        .collect();
    let corpus = Corpus::from_records(records, "mem").unwrap();
    let model = train(&corpus, &TrainConfig::seeded(2)).unwrap();
    let model_path = dir.join("model.json");
    let corpus_path = dir.join("train.jsonl");
    write_file(&model, &model_path).unwrap();
    corpus.save_jsonl(&corpus_path).unwrap();
    (model_path, corpus_path)
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(out: *mut c_char) -> serde_json::Value {
    let v = serde_json::from_str(CStr::from_ptr(out).to_str().unwrap()).unwrap();
    ts_string_free(out);
    v
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(ts_last_error()).to_string_lossy().into_owned() }
}

struct Handle(*mut TsEngine);

impl Drop for Handle {
    fn drop(&mut self) {
        unsafe { ts_engine_free(self.0) }
    }
}

fn open(model: &Path, corpus: Option<&Path>) -> Handle {
    let m = cstr(model.to_str().unwrap());
    let c = corpus.map(|p| cstr(p.to_str().unwrap()));
    let mut engine = ptr::null_mut();
    let st = unsafe { ts_engine_open(m.as_ptr(), c.as_ref().map_or(ptr::null(), |c| c.as_ptr()), &mut engine) };
    assert_eq!(st, TsStatus::Ok, "{}", last_error());
    Handle(engine)
}

#[test]
fn queries_round_trip_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let (model, corpus) = fixture(dir.path());
    let h = open(&model, Some(&corpus));
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(ts_model_info_json(h.0, &mut out), TsStatus::Ok);
        let info = take(out);
        assert_eq!(info["domain_sizes"]["c"], 3);

        let req = cstr(r#"{"text": "door seal leaking", "top_k": 2}"#);
        assert_eq!(ts_diagnose_json(h.0, req.as_ptr(), &mut out), TsStatus::Ok);
        let r = take(out);
        assert_eq!(r["causes"]["entries"][0]["label"], "cause1");
        assert_eq!(r["causes"]["entries"].as_array().unwrap().len(), 2);

        let req = cstr(r#"{"text": "door seal leaking", "generate": true}"#);
        assert_eq!(ts_solve_json(h.0, req.as_ptr(), &mut out), TsStatus::Ok);
        let r = take(out);
        assert_eq!(r["advisory"]["provenance"], "stub");

        let req = cstr(r#"{"text": "door seal", "target_env": "B"}"#);
        assert_eq!(ts_transport_json(h.0, req.as_ptr(), &mut out), TsStatus::Ok);
        take(out);

        let req = cstr(r#"{"record_id": "r4", "alt_text": "brake cable frayed", "samples": 1000}"#);
        assert_eq!(ts_recourse_json(h.0, req.as_ptr(), 5, &mut out), TsStatus::Ok);
        let r = take(out);
        assert_eq!(r["noise"]["seed"], 5);
        assert_eq!(last_error(), "");
    }
}

#[test]
fn failures_carry_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = fixture(dir.path());
    let h = open(&model, None);
    unsafe {
        let mut out = ptr::null_mut();
        let req = cstr(r#"{"text": "door", "target_env": "Z"}"#);
        assert_eq!(ts_transport_json(h.0, req.as_ptr(), &mut out), TsStatus::UnknownEnvironment);
        assert!(out.is_null());
        assert!(last_error().contains("known environments: A, B"), "{}", last_error());

        let req = cstr("{not json");
        assert_eq!(ts_diagnose_json(h.0, req.as_ptr(), &mut out), TsStatus::InvalidRequest);

        assert_eq!(ts_diagnose_json(h.0, ptr::null(), &mut out), TsStatus::NullArgument);
        assert_eq!(ts_model_info_json(ptr::null(), &mut out), TsStatus::NullArgument);

        let req = cstr(r#"{"record_id": "r1", "alt_text": "x"}"#);
        assert_eq!(ts_recourse_json(h.0, req.as_ptr(), 0, &mut out), TsStatus::InvalidArgument);

        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(ts_diagnose_json(h.0, bad.as_ptr().cast(), &mut out), TsStatus::InvalidUtf8);
    }
}

#[test]
fn open_reports_missing_and_corrupt_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut engine = ptr::null_mut();
    let missing = cstr(dir.path().join("nope.json").to_str().unwrap());
    assert_eq!(unsafe { ts_engine_open(missing.as_ptr(), ptr::null(), &mut engine) }, TsStatus::IoError);
    assert!(engine.is_null());
    assert!(last_error().contains("nope.json"));

    let corrupt = dir.path().join("bad.json");
    std::fs::write(&corrupt, b"{\"schema_version\": 1, ").unwrap();
    let p = cstr(corrupt.to_str().unwrap());
    assert_eq!(unsafe { ts_engine_open(p.as_ptr(), ptr::null(), &mut engine) }, TsStatus::ParseError);
    assert_eq!(unsafe { ts_engine_open(p.as_ptr(), ptr::null(), ptr::null_mut()) }, TsStatus::NullArgument);
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(ts_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_whole_surface() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/troubleshoot.h")).unwrap();
    for name in [
        "ts_engine_open",
        "ts_engine_free",
        "ts_model_info_json",
        "ts_diagnose_json",
        "ts_solve_json",
        "ts_transport_json",
        "ts_recourse_json",
        "ts_string_free",
        "ts_last_error",
        "ts_version",
        "typedef struct TsEngine TsEngine",
        "TS_STATUS_UNKNOWN_ENVIRONMENT = 6",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(root.join("include"))
        .arg(root.join("tests/c/smoke.c"))
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}
