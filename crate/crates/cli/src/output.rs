use crate::error::{CliError, Result};
use serde::Serialize;
use std::io::Write;
use std::path::Path;

/// Line-delimited JSON accumulated in memory and written once.
#[derive(Default)]
pub struct Jsonl {
    buf: Vec<u8>,
}

impl Jsonl {
    pub fn push<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.buf, record)
            .map_err(|e| CliError::Numerical(format!("cannot serialize record: {e}")))?;
        self.buf.push(b'\n');
        Ok(())
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

/// Writes to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let context = format!("cannot write {}", path.display());
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(&context, e))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.flush())
        .map_err(|e| CliError::io(&context, e))?;
    tmp.persist(path)
        .map_err(|e| CliError::io(&context, e.error))?;
    Ok(())
}

/// Rejects p-values outside `[0, 1]`, including NaN.
pub fn check_p(values: &[f64], what: &str) -> Result<()> {
    match values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        Some(p) => Err(CliError::Numerical(format!(
            "{what}: p-value {p} outside [0, 1]"
        ))),
        None => Ok(()),
    }
}
