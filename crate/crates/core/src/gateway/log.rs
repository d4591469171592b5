use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::request::RequestDigest;

/// One line of the append-only gateway log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub timestamp_ms: u64,
    pub digest: RequestDigest,
    pub backend_id: String,
    pub cached: bool,
    pub latency_ms: u64,
    /// 0 for cache hits, otherwise the 1-based backend attempt.
    pub attempt: u32,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Reply text of successful queries, so filter decisions can be
    /// audited from the log alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
}

/// JSONL run log. Entries are kept in memory as well so tests and callers
/// can inspect attempts without re-reading the file.
#[derive(Debug, Default)]
pub struct RunLog {
    file: Option<Mutex<BufWriter<File>>>,
    entries: Mutex<Vec<LogEntry>>,
}

impl RunLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn append_to(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Some(Mutex::new(BufWriter::new(file))),
            entries: Mutex::default(),
        })
    }

    pub fn record(&self, mut entry: LogEntry) {
        if entry.timestamp_ms == 0 {
            entry.timestamp_ms = now_ms();
        }
        if let Some(file) = &self.file {
            let mut out = file.lock().expect("log lock");
            // the log is diagnostic; a failed write must not fail the query
            if serde_json::to_writer(&mut *out, &entry).is_ok() {
                let _ = out.write_all(b"\n");
                let _ = out.flush();
            }
        }
        self.entries.lock().expect("log lock").push(entry);
    }

    pub fn entries(&self) -> Vec<LogEntry> {
        self.entries.lock().expect("log lock").clone()
    }

    /// Backend attempts made for `digest` (cache hits excluded).
    pub fn attempts_for(&self, digest: &RequestDigest) -> usize {
        self.entries
            .lock()
            .expect("log lock")
            .iter()
            .filter(|e| &e.digest == digest && !e.cached)
            .count()
    }
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
