//! Uniform access to one text LLM and one audio ALM.
//!
//! Every query goes through the same path: validation, audio resolution,
//! cache lookup by request digest, run-wide budget, per-backend rate limit,
//! and bounded retries. Backends are pluggable so all orchestration above
//! this layer can run offline against scripted replies.

mod backend;
mod cache;
mod config;
mod http;
mod limiter;
mod log;
mod request;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

pub use backend::{
    scripted_backend, Backend, BackendError, RecordingBackend, RuleBackend, Script, ScriptError, ScriptedBackend,
};
pub use cache::{CacheEntry, ResponseCache};
pub use config::{BackendConfig, Provider, RetryPolicy};
pub use http::OpenAiCompatBackend;
pub use limiter::{RateLimit, TokenBucket};
pub use log::{LogEntry, RunLog};
pub use request::{AudioRef, BackendKind, DecodeParams, Message, ModelRequest, ModelResponse, RequestDigest, Role};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("backend {backend_id} unavailable after {attempts} attempts: {last_error}")]
    BackendUnavailable {
        backend_id: String,
        attempts: u32,
        last_error: String,
    },
    #[error("backend {backend_id} rejected the request: {reason}")]
    BackendRejected { backend_id: String, reason: String },
    #[error("invalid audio {uri}: {reason}")]
    InvalidAudio { uri: String, reason: String },
    #[error("run call budget of {limit} backend calls exhausted")]
    BudgetExceeded { limit: u64 },
    #[error("no scripted response for request digest {0}")]
    ScriptMiss(RequestDigest),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no {0} backend configured")]
    NotConfigured(BackendKind),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("cache write failed: {0}")]
    Cache(String),
}

impl GatewayError {
    /// Transient infrastructure failures, as opposed to bad input or fixtures.
    pub fn is_infrastructure(&self) -> bool {
        matches!(self, GatewayError::BackendUnavailable { .. } | GatewayError::Cache(_))
    }
}

/// A configured backend together with its throttling and retry settings.
pub struct BackendSlot {
    backend: Arc<dyn Backend>,
    limiter: Option<TokenBucket>,
    retry: RetryPolicy,
}

impl BackendSlot {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            limiter: None,
            retry: RetryPolicy::default(),
        }
    }

    pub fn from_config(cfg: &BackendConfig) -> Result<Self, GatewayError> {
        let backend = cfg.build()?;
        Ok(Self {
            backend,
            limiter: cfg.rate_limit.map(TokenBucket::new),
            retry: cfg.retry,
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, limit: RateLimit) -> Self {
        self.limiter = Some(TokenBucket::new(limit));
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }
}

/// Counters exposed for run reports and tests.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct GatewayStats {
    pub queries: u64,
    pub cache_hits: u64,
    /// Requests forwarded to a backend (each may take several attempts).
    pub backend_calls: u64,
    pub attempts: u64,
}

pub struct ModelGateway {
    llm: Option<BackendSlot>,
    alm: Option<BackendSlot>,
    cache: ResponseCache,
    log: RunLog,
    budget: Option<u64>,
    queries: AtomicU64,
    cache_hits: AtomicU64,
    backend_calls: AtomicU64,
    attempts: AtomicU64,
}

pub struct GatewayBuilder {
    llm: Option<BackendSlot>,
    alm: Option<BackendSlot>,
    cache: Option<ResponseCache>,
    log: Option<RunLog>,
    budget: Option<u64>,
}

impl GatewayBuilder {
    pub fn llm(mut self, slot: BackendSlot) -> Self {
        self.llm = Some(slot);
        self
    }

    pub fn alm(mut self, slot: BackendSlot) -> Self {
        self.alm = Some(slot);
        self
    }

    pub fn llm_backend(self, backend: Arc<dyn Backend>) -> Self {
        self.llm(BackendSlot::new(backend).with_retry(RetryPolicy::no_backoff(1)))
    }

    pub fn alm_backend(self, backend: Arc<dyn Backend>) -> Self {
        self.alm(BackendSlot::new(backend).with_retry(RetryPolicy::no_backoff(1)))
    }

    pub fn cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn log(mut self, log: RunLog) -> Self {
        self.log = Some(log);
        self
    }

    /// Maximum number of backend calls (cache misses) for the whole run.
    pub fn budget(mut self, limit: Option<u64>) -> Self {
        self.budget = limit;
        self
    }

    pub fn build(self) -> ModelGateway {
        ModelGateway {
            llm: self.llm,
            alm: self.alm,
            cache: self.cache.unwrap_or_default(),
            log: self.log.unwrap_or_default(),
            budget: self.budget,
            queries: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            backend_calls: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
        }
    }
}

impl ModelGateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder {
            llm: None,
            alm: None,
            cache: None,
            log: None,
            budget: None,
        }
    }

    fn slot(&self, kind: BackendKind) -> Result<&BackendSlot, GatewayError> {
        match kind {
            BackendKind::Llm => self.llm.as_ref(),
            BackendKind::Alm => self.alm.as_ref(),
        }
        .ok_or(GatewayError::NotConfigured(kind))
    }

    pub fn backend_id(&self, kind: BackendKind) -> Option<&str> {
        self.slot(kind).ok().map(BackendSlot::backend_id)
    }

    /// Digest the gateway would use for `req`.
    pub fn digest_for(&self, req: &ModelRequest) -> Result<RequestDigest, GatewayError> {
        Ok(req.digest(self.slot(req.backend_kind)?.backend_id()))
    }

    pub fn query(&self, req: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        self.queries.fetch_add(1, Ordering::SeqCst);
        req.validate()?;
        let slot = self.slot(req.backend_kind)?;
        if let Some(audio) = &req.audio {
            audio.check_resolvable()?;
        }
        let backend_id = slot.backend_id().to_string();
        let digest = req.digest(&backend_id);

        if let Some(hit) = self.cache.get(&digest) {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            self.log.record(LogEntry {
                timestamp_ms: 0,
                digest,
                backend_id: backend_id.clone(),
                cached: true,
                latency_ms: 0,
                attempt: 0,
                ok: true,
                error: None,
                response: Some(hit.text.clone()),
            });
            return Ok(ModelResponse {
                text: hit.text,
                backend_id,
                cached: true,
                latency_ms: 0,
            });
        }

        let issued = self.backend_calls.fetch_add(1, Ordering::SeqCst) + 1;
        if let Some(limit) = self.budget {
            if issued > limit {
                self.backend_calls.fetch_sub(1, Ordering::SeqCst);
                return Err(GatewayError::BudgetExceeded { limit });
            }
        }

        let max_attempts = slot.retry.max_attempts.max(1);
        let mut last_error = String::new();
        for attempt in 1..=max_attempts {
            if let Some(limiter) = &slot.limiter {
                limiter.acquire();
            }
            self.attempts.fetch_add(1, Ordering::SeqCst);
            let started = Instant::now();
            let outcome = slot.backend.complete(req, &digest);
            let latency_ms = started.elapsed().as_millis() as u64;
            let entry = |ok: bool, error: Option<String>, response: Option<String>| LogEntry {
                timestamp_ms: 0,
                digest: digest.clone(),
                backend_id: backend_id.clone(),
                cached: false,
                latency_ms,
                attempt,
                ok,
                error,
                response,
            };
            match outcome {
                Ok(text) if !text.trim().is_empty() => {
                    self.log.record(entry(true, None, Some(text.clone())));
                    self.cache
                        .put(
                            &digest,
                            CacheEntry {
                                backend_id: backend_id.clone(),
                                latency_ms,
                                text: text.clone(),
                            },
                        )
                        .map_err(|e| GatewayError::Cache(e.to_string()))?;
                    return Ok(ModelResponse {
                        text,
                        backend_id,
                        cached: false,
                        latency_ms,
                    });
                }
                Ok(_) => {
                    last_error = "empty response".to_string();
                    self.log.record(entry(false, Some(last_error.clone()), None));
                }
                Err(BackendError::Transient(reason)) => {
                    self.log.record(entry(false, Some(reason.clone()), None));
                    last_error = reason;
                }
                Err(BackendError::Permanent(reason)) => {
                    self.log.record(entry(false, Some(reason.clone()), None));
                    return Err(GatewayError::BackendRejected { backend_id, reason });
                }
                Err(BackendError::ScriptMiss(d)) => {
                    self.log.record(entry(false, Some("script miss".into()), None));
                    return Err(GatewayError::ScriptMiss(d));
                }
            }
            if attempt < max_attempts {
                std::thread::sleep(slot.retry.backoff(attempt));
            }
        }
        Err(GatewayError::BackendUnavailable {
            backend_id,
            attempts: max_attempts,
            last_error,
        })
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            queries: self.queries.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            backend_calls: self.backend_calls.load(Ordering::SeqCst),
            attempts: self.attempts.load(Ordering::SeqCst),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    fn echo_gateway() -> (ModelGateway, Arc<RuleBackend>) {
        let backend = Arc::new(RuleBackend::new("echo", |req: &ModelRequest| {
            Ok(format!("echo: {}", req.prompt()))
        }));
        let gw = ModelGateway::builder().llm_backend(backend.clone()).build();
        (gw, backend)
    }

    #[test]
    fn second_identical_query_is_cached() {
        let (gw, backend) = echo_gateway();
        let req = ModelRequest::llm("hi");
        let first = gw.query(&req).unwrap();
        let second = gw.query(&req).unwrap();
        assert!(!first.cached);
        assert!(second.cached);
        assert_eq!(first.text, second.text);
        assert_eq!(backend.calls(), 1);
    }

    #[test]
    fn scripted_replay_returns_script_text() {
        let req = ModelRequest::llm("d1");
        let mut script = Script::new();
        script.insert(req.digest("replay"), "yes");
        let gw = ModelGateway::builder()
            .llm_backend(scripted_backend("replay", script))
            .build();
        assert_eq!(gw.query(&req).unwrap().text, "yes");
        assert!(matches!(
            gw.query(&ModelRequest::llm("other")),
            Err(GatewayError::ScriptMiss(_))
        ));
    }

    #[test]
    fn two_scripted_entries_answer_without_network() {
        let a = ModelRequest::llm("a");
        let b = ModelRequest::llm("b");
        let mut script = Script::new();
        script.insert(a.digest("s"), "A");
        script.insert(b.digest("s"), "B");
        let backend = scripted_backend("s", script);
        let gw = ModelGateway::builder().llm_backend(backend.clone()).build();
        assert_eq!(gw.query(&a).unwrap().text, "A");
        assert_eq!(gw.query(&b).unwrap().text, "B");
        assert_eq!(backend.calls(), 2);
    }

    #[test]
    fn missing_audio_file_is_invalid_audio() {
        let backend = Arc::new(RuleBackend::new("alm", |_: &ModelRequest| Ok("x".to_string())));
        let gw = ModelGateway::builder().alm_backend(backend.clone()).build();
        let req = ModelRequest::alm(AudioRef::new("/definitely/not/here.wav", "d", "s"), "Describe.");
        assert!(matches!(gw.query(&req), Err(GatewayError::InvalidAudio { .. })));
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn retries_exhaust_after_exact_attempts() {
        let backend = Arc::new(RuleBackend::new("flaky", |_: &ModelRequest| {
            Err(BackendError::Transient("503".into()))
        }));
        let gw = ModelGateway::builder()
            .llm(BackendSlot::new(backend.clone()).with_retry(RetryPolicy::no_backoff(4)))
            .build();
        let req = ModelRequest::llm("q");
        match gw.query(&req) {
            Err(GatewayError::BackendUnavailable { attempts, .. }) => assert_eq!(attempts, 4),
            other => panic!("{other:?}"),
        }
        assert_eq!(backend.calls(), 4);
        assert_eq!(gw.log().attempts_for(&req.digest("flaky")), 4);
    }

    #[test]
    fn transient_then_success() {
        let failures = Arc::new(AtomicU32::new(2));
        let f = failures.clone();
        let backend = Arc::new(RuleBackend::new("flaky", move |_: &ModelRequest| {
            if f.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                .is_ok()
            {
                Err(BackendError::Transient("timeout".into()))
            } else {
                Ok("done".into())
            }
        }));
        let gw = ModelGateway::builder()
            .llm(BackendSlot::new(backend).with_retry(RetryPolicy::no_backoff(3)))
            .build();
        assert_eq!(gw.query(&ModelRequest::llm("q")).unwrap().text, "done");
        assert_eq!(gw.stats().attempts, 3);
    }

    #[test]
    fn permanent_errors_are_not_retried() {
        let backend = Arc::new(RuleBackend::new("strict", |_: &ModelRequest| {
            Err(BackendError::Permanent("400".into()))
        }));
        let gw = ModelGateway::builder()
            .llm(BackendSlot::new(backend.clone()).with_retry(RetryPolicy::no_backoff(5)))
            .build();
        assert!(matches!(
            gw.query(&ModelRequest::llm("q")),
            Err(GatewayError::BackendRejected { .. })
        ));
        assert_eq!(backend.calls(), 1);
    }

    #[test]
    fn budget_counts_backend_calls_only() {
        let (gw, _) = echo_gateway();
        let gw = ModelGateway { budget: Some(2), ..gw };
        gw.query(&ModelRequest::llm("1")).unwrap();
        gw.query(&ModelRequest::llm("1")).unwrap();
        gw.query(&ModelRequest::llm("2")).unwrap();
        assert!(matches!(
            gw.query(&ModelRequest::llm("3")),
            Err(GatewayError::BudgetExceeded { limit: 2 })
        ));
    }

    #[test]
    fn evicting_cache_and_requerying_replay_is_stable() {
        let (gw, backend) = echo_gateway();
        let req = ModelRequest::llm("stable");
        let before = gw.query(&req).unwrap().text;
        gw.cache().clear().unwrap();
        let after = gw.query(&req).unwrap();
        assert!(!after.cached);
        assert_eq!(before, after.text);
        assert_eq!(backend.calls(), 2);
    }

    #[test]
    fn concurrent_queries_share_cache() {
        let (gw, backend) = echo_gateway();
        let gw = Arc::new(gw);
        std::thread::scope(|s| {
            for t in 0..8 {
                let gw = gw.clone();
                s.spawn(move || {
                    for i in 0..20 {
                        let text = gw.query(&ModelRequest::llm(format!("p{}", (i + t) % 10))).unwrap().text;
                        assert_eq!(text, format!("echo: p{}", (i + t) % 10));
                    }
                });
            }
        });
        assert!(backend.calls() >= 10);
        assert_eq!(gw.cache().len(), 10);
    }
}
