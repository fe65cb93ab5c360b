//! Append-only record of tool invocations.
//!
//! Every command appends exactly one JSON line describing what ran, over
//! which model and configuration, and what came out. Appends take an
//! exclusive sidecar lock so concurrent invocations cannot interleave
//! partial lines. Entries carry enough to re-run the evaluation they
//! describe.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::error::{Error, Result};

/// One invocation record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLedgerEntry {
    pub timestamp: DateTime<Utc>,
    /// Subcommand name plus the flags that shaped the run.
    pub command: String,
    pub config_digest: String,
    pub model_id: String,
    pub plan_digest: String,
    /// Free-form result summary (perplexities, counts, error text).
    pub result: serde_json::Value,
    /// Files the run produced, relative to its output directory.
    pub artifacts: Vec<String>,
}

fn lock_path(ledger: &Path) -> PathBuf {
    let mut name = ledger.file_name().unwrap_or_default().to_os_string();
    name.push(".lock");
    ledger.with_file_name(name)
}

struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn acquire_lock(ledger: &Path) -> Result<LockGuard> {
    let path = lock_path(ledger);
    for _ in 0..500 {
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => return Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                std::thread::sleep(Duration::from_millis(10));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::TimedOut,
        format!("ledger lock {} held too long", path.display()),
    )))
}

/// Appends one entry under the ledger lock.
pub fn append_entry(ledger: &Path, entry: &RunLedgerEntry) -> Result<()> {
    if let Some(parent) = ledger.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let _guard = acquire_lock(ledger)?;
    let mut line = serde_json::to_string(entry)?;
    line.push('\n');
    let mut file = OpenOptions::new().create(true).append(true).open(ledger)?;
    file.write_all(line.as_bytes())?;
    file.flush()?;
    Ok(())
}

/// Reads every entry in append order.
pub fn read_entries(ledger: &Path) -> Result<Vec<RunLedgerEntry>> {
    let raw = fs::read_to_string(ledger)?;
    let mut entries = Vec::new();
    for line in raw.lines() {
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(line)?);
    }
    Ok(entries)
}

/// Fetches one entry by position in the ledger.
pub fn entry_at(ledger: &Path, index: usize) -> Result<RunLedgerEntry> {
    let entries = read_entries(ledger)?;
    entries
        .into_iter()
        .nth(index)
        .ok_or_else(|| Error::LedgerEntryNotFound(format!("index {index}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn entry(command: &str) -> RunLedgerEntry {
        RunLedgerEntry {
            timestamp: Utc::now(),
            command: command.to_string(),
            config_digest: "cfg".to_string(),
            model_id: "m".to_string(),
            plan_digest: "baseline".to_string(),
            result: serde_json::json!({"ok": true}),
            artifacts: vec!["out.json".to_string()],
        }
    }

    #[test]
    fn appends_accumulate_in_order() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        append_entry(&path, &entry("profile")).unwrap();
        append_entry(&path, &entry("intervene")).unwrap();
        let entries = read_entries(&path).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].command, "profile");
        assert_eq!(entries[1].command, "intervene");
        assert_eq!(entry_at(&path, 1).unwrap().command, "intervene");
        assert!(matches!(
            entry_at(&path, 2),
            Err(Error::LedgerEntryNotFound(_))
        ));
    }

    #[test]
    fn concurrent_appends_never_interleave() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        let mut handles = Vec::new();
        for i in 0..8 {
            let path = path.clone();
            handles.push(std::thread::spawn(move || {
                for j in 0..5 {
                    append_entry(&path, &entry(&format!("cmd-{i}-{j}"))).unwrap();
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        let entries = read_entries(&path).unwrap();
        assert_eq!(entries.len(), 40);
    }

    #[test]
    fn stale_lock_times_out() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("runs.jsonl");
        fs::write(lock_path(&path), b"").unwrap();
        // Shorten the wait by checking the error kind only; the loop takes a
        // few seconds by design.
        let err = append_entry(&path, &entry("blocked")).unwrap_err();
        match err {
            Error::Io(e) => assert_eq!(e.kind(), std::io::ErrorKind::TimedOut),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
