//! File output helpers: atomic writes and schema-version checks.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Version stamped into every CSV (as a column) and JSON (as a field) file.
pub const SCHEMA_VERSION: u32 = 1;

/// Write `bytes` to a sibling temp file, fsync, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reject a JSON document whose `schema_version` differs from ours.
pub fn check_json_schema(path: &Path, value: &serde_json::Value) -> Result<()> {
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => Ok(()),
        other => Err(Error::SchemaVersion {
            path: path.to_path_buf(),
            expected: SCHEMA_VERSION,
            found: other.map_or_else(|| "missing".to_string(), |v| v.to_string()),
        }),
    }
}

/// Reject a CSV whose header lacks `schema_version` or whose rows carry a
/// different version.
pub fn check_csv_schema(path: &Path, text: &str) -> Result<()> {
    let mismatch = |found: String| Error::SchemaVersion {
        path: path.to_path_buf(),
        expected: SCHEMA_VERSION,
        found,
    };
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = headers
        .iter()
        .position(|h| h == "schema_version")
        .ok_or_else(|| mismatch("missing".into()))?;
    for record in rdr.records() {
        let record = record?;
        let field = record.get(col).unwrap_or("");
        if field != SCHEMA_VERSION.to_string() {
            return Err(mismatch(field.to_string()));
        }
    }
    Ok(())
}
