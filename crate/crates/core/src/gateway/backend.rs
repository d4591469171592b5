use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::request::{ModelRequest, RequestDigest};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    /// Worth retrying: network failure, throttling, server error.
    #[error("transient backend failure: {0}")]
    Transient(String),
    /// The backend refused the request; retrying will not help.
    #[error("backend rejected request: {0}")]
    Permanent(String),
    #[error("no scripted response for request digest {0}")]
    ScriptMiss(RequestDigest),
}

/// A model endpoint. Implementations must be callable from many threads.
pub trait Backend: Send + Sync {
    /// Opaque identifier folded into every cache key.
    fn id(&self) -> &str;

    fn complete(&self, req: &ModelRequest, digest: &RequestDigest) -> Result<String, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, req: &ModelRequest, digest: &RequestDigest) -> Result<String, BackendError> {
        (**self).complete(req, digest)
    }
}

/// Mapping from request digest to response text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    entries: BTreeMap<RequestDigest, String>,
}

#[derive(Serialize, Deserialize)]
struct ScriptLine {
    digest: RequestDigest,
    text: String,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("script line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Script {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, digest: RequestDigest, text: impl Into<String>) {
        self.entries.insert(digest, text.into());
    }

    pub fn get(&self, digest: &RequestDigest) -> Option<&str> {
        self.entries.get(digest).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&RequestDigest, &str)> {
        self.entries.iter().map(|(d, t)| (d, t.as_str()))
    }

    /// Reads a JSONL script, one `{"digest": ..., "text": ...}` per line.
    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let file = std::fs::File::open(path)?;
        let mut script = Script::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ScriptLine = serde_json::from_str(&line).map_err(|e| ScriptError::Malformed {
                line: idx + 1,
                reason: e.to_string(),
            })?;
            let digest = RequestDigest::parse(parsed.digest.as_str()).ok_or_else(|| ScriptError::Malformed {
                line: idx + 1,
                reason: format!("not a sha256 hex digest: {}", parsed.digest),
            })?;
            script.insert(digest, parsed.text);
        }
        Ok(script)
    }

    pub fn save(&self, path: &Path) -> Result<(), ScriptError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (digest, text) in &self.entries {
            let line = ScriptLine {
                digest: digest.clone(),
                text: text.clone(),
            };
            serde_json::to_writer(&mut out, &line).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

impl FromIterator<(RequestDigest, String)> for Script {
    fn from_iter<T: IntoIterator<Item = (RequestDigest, String)>>(iter: T) -> Self {
        Script {
            entries: iter.into_iter().collect(),
        }
    }
}

/// Replay backend: answers only digests present in its script.
pub struct ScriptedBackend {
    id: String,
    script: Script,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(id: impl Into<String>, script: Script) -> Self {
        Self {
            id: id.into(),
            script,
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of times the backend was asked for a completion.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, _req: &ModelRequest, digest: &RequestDigest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.script
            .get(digest)
            .map(str::to_string)
            .ok_or_else(|| BackendError::ScriptMiss(digest.clone()))
    }
}

/// Build a replay backend from a digest→text script.
pub fn scripted_backend(id: impl Into<String>, script: Script) -> Arc<ScriptedBackend> {
    Arc::new(ScriptedBackend::new(id, script))
}

type Responder = dyn Fn(&ModelRequest) -> Result<String, BackendError> + Send + Sync;

/// Backend driven by a closure over the request. Test fixtures use it to
/// answer by prompt content instead of by precomputed digest.
pub struct RuleBackend {
    id: String,
    respond: Box<Responder>,
    calls: AtomicUsize,
}

impl RuleBackend {
    pub fn new<F>(id: impl Into<String>, respond: F) -> Self
    where
        F: Fn(&ModelRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        Self {
            id: id.into(),
            respond: Box::new(respond),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for RuleBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &ModelRequest, _digest: &RequestDigest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.respond)(req)
    }
}

/// Wraps a backend and records every successful answer into a script,
/// so a live or rule-driven run can be replayed later.
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Mutex<Script>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            recorded: Mutex::new(Script::new()),
        }
    }

    pub fn script(&self) -> Script {
        self.recorded.lock().expect("recording lock").clone()
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, req: &ModelRequest, digest: &RequestDigest) -> Result<String, BackendError> {
        let text = self.inner.complete(req, digest)?;
        self.recorded
            .lock()
            .expect("recording lock")
            .insert(digest.clone(), text.clone());
        Ok(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_script_misses() {
        let backend = ScriptedBackend::new("s", Script::new());
        let req = ModelRequest::llm("anything");
        let digest = req.digest("s");
        match backend.complete(&req, &digest) {
            Err(BackendError::ScriptMiss(d)) => assert_eq!(d, digest),
            other => panic!("expected miss, got {other:?}"),
        }
    }

    #[test]
    fn script_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.jsonl");
        let mut script = Script::new();
        script.insert(ModelRequest::llm("a").digest("s"), "yes");
        script.insert(ModelRequest::llm("b").digest("s"), "line one\nline two");
        script.save(&path).unwrap();
        assert_eq!(Script::load(&path).unwrap(), script);
    }

    #[test]
    fn bad_digest_is_reported_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.jsonl");
        std::fs::write(&path, "\n{\"digest\":\"abc\",\"text\":\"x\"}\n").unwrap();
        match Script::load(&path) {
            Err(ScriptError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
