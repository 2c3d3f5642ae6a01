//! Run directory layout and the raw response archive.
//!
//! ```text
//! <root>/<run_id>/plan.json
//!                 manifest.json
//!                 log.ndjson
//!                 .lock
//!                 raw/<entity>/<key>.json
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::adapters::Variant;
use crate::plan::EntityKind;

pub const PLAN_FILE: &str = "plan.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOG_FILE: &str = "log.ndjson";
pub const LOCK_FILE: &str = ".lock";
pub const RAW_DIR: &str = "raw";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("archive i/o error at {path}: {message}")]
pub struct ArchiveIoError {
    pub path: PathBuf,
    pub message: String,
}

impl ArchiveIoError {
    pub fn new(path: &Path, err: impl std::fmt::Display) -> Self {
        Self {
            path: path.to_owned(),
            message: err.to_string(),
        }
    }
}

/// Lower-case hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes via a sibling temp file and rename so readers never observe a
/// partially written file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), ArchiveIoError> {
    let dir = path.parent().ok_or_else(|| ArchiveIoError::new(path, "no parent directory"))?;
    fs::create_dir_all(dir).map_err(|e| ArchiveIoError::new(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(
        ".{name}.tmp-{}-{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(ArchiveIoError::new(path, e));
    }
    Ok(())
}

/// Removes temp files left behind by a writer that died mid-write.
/// Only safe while holding the run lock.
pub fn sweep_temp_files(run_dir: &Path) -> Result<usize, ArchiveIoError> {
    let mut removed = 0;
    for rel in walk_files(run_dir) {
        let orphan = rel
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with('.') && n.contains(".tmp-"));
        if orphan {
            let path = run_dir.join(&rel);
            fs::remove_file(&path).map_err(|e| ArchiveIoError::new(&path, e))?;
            removed += 1;
        }
    }
    Ok(removed)
}

/// Relative path of a raw document: `raw/<entity>/<key>.json`.
pub fn raw_rel_path(entity: EntityKind, key: &str) -> PathBuf {
    Path::new(RAW_DIR).join(entity.as_str()).join(format!("{key}.json"))
}

/// Persists a response body verbatim. Re-writing identical bytes is a no-op.
pub fn write_raw(run_dir: &Path, entity: EntityKind, key: &str, body: &[u8]) -> Result<PathBuf, ArchiveIoError> {
    let rel = raw_rel_path(entity, key);
    let path = run_dir.join(&rel);
    if let Ok(existing) = fs::read(&path) {
        if existing == body {
            return Ok(rel);
        }
    }
    atomic_write(&path, body)?;
    Ok(rel)
}

/// Parsed raw file stem: `page-0002`, `review-17`, `review-17-general`,
/// `review-17-page-0003`, `review-17-general-page-0002`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct RawKey {
    pub review: Option<u64>,
    pub general: bool,
    pub page: u32,
}

impl RawKey {
    pub fn variant(&self) -> Variant {
        if self.general {
            Variant::General
        } else {
            Variant::Primary
        }
    }

    pub fn parse(stem: &str) -> Option<RawKey> {
        if let Some(p) = stem.strip_prefix("page-") {
            return Some(RawKey {
                review: None,
                general: false,
                page: p.parse().ok().filter(|n| *n > 0)?,
            });
        }
        let rest = stem.strip_prefix("review-")?;
        let (head, page) = match rest.split_once("-page-") {
            Some((h, p)) => (h, p.parse().ok().filter(|n| *n > 1)?),
            None => (rest, 1),
        };
        let (num, general) = match head.strip_suffix("-general") {
            Some(n) => (n, true),
            None => (head, false),
        };
        Some(RawKey {
            review: Some(num.parse().ok()?),
            general,
            page,
        })
    }
}

/// Raw files of one entity, sorted by key. Unrecognized names are skipped.
pub fn list_raw(run_dir: &Path, entity: EntityKind) -> Result<Vec<(RawKey, PathBuf)>, ArchiveIoError> {
    let dir = run_dir.join(RAW_DIR).join(entity.as_str());
    let entries = match fs::read_dir(&dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(ArchiveIoError::new(&dir, e)),
    };
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| ArchiveIoError::new(&dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        if let Some(key) = RawKey::parse(stem) {
            out.push((key, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Every regular file under a directory, relative and sorted.
pub fn walk_files(dir: &Path) -> Vec<PathBuf> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
        let Ok(entries) = fs::read_dir(dir) else { return };
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                walk(base, &path, out);
            } else if let Ok(rel) = path.strip_prefix(base) {
                out.push(rel.to_owned());
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
