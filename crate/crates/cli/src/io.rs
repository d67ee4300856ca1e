use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ecgdel_core::wfdb::interchange::{import_interchange, LabeledRecord};
use ecgdel_core::wfdb::{ingest_record, IngestOptions};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::data;

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| data(format!("cannot read {}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Loads an interchange JSON document, or a WFDB record given its `.hea`
/// path (or path without extension).
pub fn load_record(path: &Path) -> Result<LabeledRecord> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = read_text(path)?;
        return import_interchange(&text).with_context(|| format!("loading {}", path.display()));
    }
    let stem: PathBuf = path.with_extension("");
    let dir = stem.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let id = stem
        .file_name()
        .ok_or_else(|| data(format!("not a record path: {}", path.display())))?
        .to_string_lossy()
        .into_owned();
    let (rec, report) = ingest_record(dir, &id, &IngestOptions::default())
        .with_context(|| format!("loading {}", path.display()))?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(rec)
}
