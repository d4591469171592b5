//! Content-addressed response cache.
//!
//! On disk every entry is one file named `<digest>.entry`: a short
//! `key: value` header, a blank line, then the raw response text. Entries
//! are written to a temporary file and renamed into place, so readers never
//! observe a partial entry.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use super::request::RequestDigest;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub backend_id: String,
    pub latency_ms: u64,
    pub text: String,
}

impl CacheEntry {
    fn encode(&self, digest: &RequestDigest) -> String {
        format!(
            "digest: {}\nbackend_id: {}\nlatency_ms: {}\nbytes: {}\n\n{}",
            digest,
            self.backend_id,
            self.latency_ms,
            self.text.len(),
            self.text
        )
    }

    fn decode(raw: &str) -> Option<Self> {
        let (header, text) = raw.split_once("\n\n")?;
        let mut backend_id = None;
        let mut latency_ms = 0;
        let mut bytes = None;
        for line in header.lines() {
            let (key, value) = line.split_once(": ")?;
            match key {
                "backend_id" => backend_id = Some(value.to_string()),
                "latency_ms" => latency_ms = value.parse().ok()?,
                "bytes" => bytes = Some(value.parse::<usize>().ok()?),
                _ => {}
            }
        }
        if bytes? != text.len() {
            return None;
        }
        Some(Self {
            backend_id: backend_id?,
            latency_ms,
            text: text.to_string(),
        })
    }
}

/// In-memory map backed by an optional cache directory.
#[derive(Debug, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<RequestDigest, CacheEntry>>,
}

impl ResponseCache {
    /// Cache that lives only as long as the process.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Cache persisted under `dir` (created if missing).
    pub fn on_disk(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            memory: RwLock::default(),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn entry_path(&self, digest: &RequestDigest) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{digest}.entry")))
    }

    pub fn get(&self, digest: &RequestDigest) -> Option<CacheEntry> {
        if let Some(hit) = self.memory.read().expect("cache lock").get(digest) {
            return Some(hit.clone());
        }
        let path = self.entry_path(digest)?;
        let raw = fs::read_to_string(path).ok()?;
        let entry = CacheEntry::decode(&raw)?;
        self.memory
            .write()
            .expect("cache lock")
            .insert(digest.clone(), entry.clone());
        Some(entry)
    }

    pub fn put(&self, digest: &RequestDigest, entry: CacheEntry) -> std::io::Result<()> {
        if let Some(path) = self.entry_path(digest) {
            let tmp = path.with_extension(format!("tmp.{}.{:?}", std::process::id(), std::thread::current().id()));
            {
                let mut file = fs::File::create(&tmp)?;
                file.write_all(entry.encode(digest).as_bytes())?;
                file.sync_all()?;
            }
            fs::rename(&tmp, &path)?;
        }
        self.memory.write().expect("cache lock").insert(digest.clone(), entry);
        Ok(())
    }

    /// Drops every entry, in memory and on disk.
    pub fn clear(&self) -> std::io::Result<()> {
        self.memory.write().expect("cache lock").clear();
        if let Some(dir) = &self.dir {
            for item in fs::read_dir(dir)? {
                let path = item?.path();
                if path.extension().is_some_and(|e| e == "entry") {
                    fs::remove_file(path)?;
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.memory.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ModelRequest;

    #[test]
    fn disk_entries_survive_a_new_cache() {
        let dir = tempfile::tempdir().unwrap();
        let digest = ModelRequest::llm("q").digest("b");
        let entry = CacheEntry {
            backend_id: "b".into(),
            latency_ms: 12,
            text: "multi\n\nline answer".into(),
        };
        ResponseCache::on_disk(dir.path())
            .unwrap()
            .put(&digest, entry.clone())
            .unwrap();
        let reopened = ResponseCache::on_disk(dir.path()).unwrap();
        assert_eq!(reopened.get(&digest), Some(entry));
        reopened.clear().unwrap();
        assert_eq!(reopened.get(&digest), None);
    }

    #[test]
    fn truncated_entry_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let digest = ModelRequest::llm("q").digest("b");
        std::fs::write(
            dir.path().join(format!("{digest}.entry")),
            "digest: x\nbackend_id: b\nlatency_ms: 1\nbytes: 99\n\nshort",
        )
        .unwrap();
        let cache = ResponseCache::on_disk(dir.path()).unwrap();
        assert_eq!(cache.get(&digest), None);
    }
}
