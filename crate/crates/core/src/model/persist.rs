//! Single-document JSON model artifact.

use std::io::Write;
use std::path::Path;

use super::CbnModel;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub fn save(model: &CbnModel) -> Vec<u8> {
    let mut bytes = serde_json::to_vec(model).expect("model serializes");
    bytes.push(b'\n');
    bytes
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in bytes.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(bytes.len());
        }
        offset += l.len() + 1;
    }
    bytes.len()
}

/// Parse an artifact. Version is checked before the body is decoded, so an
/// old artifact reports a migration error rather than a field mismatch.
pub fn load(bytes: &[u8]) -> Result<CbnModel> {
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let version = value
        .get("schema_version")
        .and_then(serde_json::Value::as_i64)
        .ok_or_else(|| Error::Parse {
            offset: 0,
            message: "missing integer schema_version".into(),
        })?;
    if version != SCHEMA_VERSION as i64 {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: SCHEMA_VERSION,
        });
    }
    let model: CbnModel = serde_json::from_value(value).map_err(|e| Error::Parse {
        offset: 0,
        message: format!("artifact structure: {e}"),
    })?;
    model.validate()?;
    Ok(model)
}

/// Write through a temporary file in the target directory, then rename.
pub fn write_file(model: &CbnModel, path: &Path) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| Error::io(format!("creating temporary file in {}", dir.display()), e))?;
    tmp.write_all(&save(model))
        .and_then(|_| tmp.flush())
        .map_err(|e| Error::io("writing model artifact", e))?;
    tmp.persist(path)
        .map_err(|e| Error::io(format!("moving artifact into {}", path.display()), e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<CbnModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("cannot read model {}", path.display()), e))?;
    load(&bytes)
}
