//! Atomic file writes and crash-injection checkpoints.
//!
//! Every durable write in the pipeline goes through [`write_atomic`]: the
//! bytes land in a sibling temp file which is synced and then renamed over
//! the destination, so readers only ever observe the old or the new file.
//!
//! Setting `CURATE_FAULT_POINT=n` makes the process abort at the n-th
//! [`checkpoint`] it passes (1-based). Tests use this to kill a stage at an
//! arbitrary point and then verify that a rerun converges to the clean result.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const FAULT_POINT_ENV: &str = "CURATE_FAULT_POINT";

static PASSED: AtomicU64 = AtomicU64::new(0);

fn fault_point() -> Option<u64> {
    static POINT: OnceLock<Option<u64>> = OnceLock::new();
    *POINT.get_or_init(|| {
        std::env::var(FAULT_POINT_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
    })
}

/// Marks a point where the process may be killed by fault injection.
pub fn checkpoint() {
    let n = PASSED.fetch_add(1, Ordering::SeqCst) + 1;
    if fault_point() == Some(n) {
        eprintln!("fault injection: aborting at checkpoint {n}");
        std::process::abort();
    }
}

/// Number of checkpoints this process has passed so far.
pub fn checkpoints_passed() -> u64 {
    PASSED.load(Ordering::SeqCst)
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp"))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = temp_path(path);
    let mut file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let half = bytes.len() / 2;
    file.write_all(&bytes[..half])
        .map_err(|e| Error::io(&tmp, e))?;
    checkpoint();
    file.write_all(&bytes[half..])
        .map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    checkpoint();
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        // Directory fsync is best effort; not every platform allows opening a directory.
        if let Ok(dir) = File::open(parent) {
            let _ = dir.sync_all();
        }
    }
    Ok(())
}

/// Appends one line and syncs; used for append-only logs.
pub fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    file.write_all(line.as_bytes())
        .and_then(|_| file.write_all(b"\n"))
        .and_then(|_| file.sync_data())
        .map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("out.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"second");
        assert!(!temp_path(&path).exists());
    }

    #[test]
    fn append_line_accumulates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        append_line(&path, "a").unwrap();
        append_line(&path, "b").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "a\nb\n");
    }
}
