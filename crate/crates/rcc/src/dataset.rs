//! Line-oriented dataset I/O.
//!
//! Every dataset this crate reads or writes is JSON Lines: one record per
//! line, UTF-8, `\n` separators, no trailing blank line beyond the final
//! newline. Writers serialize structs whose fields are declared in a fixed
//! order and whose maps are `BTreeMap`s, so a given record list always
//! produces the same bytes — the determinism tests diff whole files.
//!
//! Writes go through [`write_atomic`]: content lands in a temporary file in
//! the target directory and is renamed into place, so readers never observe
//! a half-written dataset and an interrupted run leaves the previous file
//! intact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw per-video input: one or more source captions plus free-form metadata
/// that generation prompts may reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub video_id: String,
    pub captions: Vec<String>,
    #[serde(default)]
    pub meta: String,
}

/// Write `bytes` to `path` via a same-directory temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(
        ".{}.tmp-{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        Ok(())
    };
    write().map_err(|e| Error::io(tmp.display().to_string(), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Serialize records to a JSONL byte buffer.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)
            .map_err(|e| Error::Invariant(format!("record serialization failed: {e}")))?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Write records as JSONL, atomically.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_atomic(path, &to_jsonl(items)?)
}

/// Parse records from JSONL text; blank lines are ignored, anything else
/// must parse, and errors carry the 1-based line number.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, origin: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("{origin}:{}: {e}", idx + 1)))?;
        out.push(item);
    }
    Ok(out)
}

/// Read a whole JSONL file.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_jsonl(&text, &path.display().to_string())
}
