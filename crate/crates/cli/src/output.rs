use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn create_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| CliError::io(p, e)),
        _ => Ok(()),
    }
}

/// Pretty JSON with object keys in sorted order (serde_json's default map is
/// a BTreeMap, so going through `Value` sorts struct fields too).
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let v = serde_json::to_value(value).map_err(|e| CliError::io(path, e))?;
    let mut text = serde_json::to_string_pretty(&v).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    create_parent(path)?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
