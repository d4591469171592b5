use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::backend::{Backend, Script, ScriptedBackend};
use super::http::OpenAiCompatBackend;
use super::limiter::RateLimit;
use super::GatewayError;

/// Retry policy for transient backend failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts including the first one.
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff_ms: 500,
            max_backoff_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    /// Backoff before attempt `attempt + 1` (doubling, capped).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let exp = attempt.saturating_sub(1).min(20);
        let ms = self
            .initial_backoff_ms
            .saturating_mul(1u64 << exp)
            .min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }

    pub fn no_backoff(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            initial_backoff_ms: 0,
            max_backoff_ms: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    /// OpenAI-compatible `/v1/chat/completions` endpoint.
    OpenaiCompatible,
    /// Offline replay of a digest→text JSONL script.
    Scripted,
}

/// One backend entry of the run config.
///
/// ```toml
/// [llm]
/// provider = "openai_compatible"
/// endpoint = "http://localhost:8000/v1/chat/completions"
/// auth_env = "LLM_API_KEY"
/// model = "Qwen3-8B"
/// rate_limit = { requests_per_second = 4.0, burst = 8 }
/// retry = { max_attempts = 3, initial_backoff_ms = 500 }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub provider: Provider,
    /// Opaque model identifier sent to the endpoint.
    pub model: String,
    /// Cache-key identity; defaults to `model`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    /// Script file for the scripted provider.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limit: Option<RateLimit>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

impl BackendConfig {
    pub fn scripted(model: impl Into<String>, script: impl Into<PathBuf>) -> Self {
        Self {
            provider: Provider::Scripted,
            model: model.into(),
            backend_id: None,
            endpoint: None,
            auth_env: None,
            script: Some(script.into()),
            rate_limit: None,
            retry: RetryPolicy::default(),
            timeout_secs: default_timeout(),
        }
    }

    pub fn backend_id(&self) -> &str {
        self.backend_id.as_deref().unwrap_or(&self.model)
    }

    /// Checks the entry without touching the network or the script file.
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: String| Err(GatewayError::Config(m));
        if self.model.trim().is_empty() {
            return bad("backend model id is empty".into());
        }
        if self.retry.max_attempts == 0 {
            return bad("retry.max_attempts must be at least 1".into());
        }
        if let Some(limit) = self.rate_limit {
            if limit.requests_per_second.is_nan() || limit.requests_per_second <= 0.0 {
                return bad("rate_limit.requests_per_second must be positive".into());
            }
        }
        match self.provider {
            Provider::OpenaiCompatible => {
                if self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
                    return bad(format!("backend {}: endpoint is required", self.backend_id()));
                }
                if let Some(var) = &self.auth_env {
                    if std::env::var(var).is_err() {
                        return bad(format!(
                            "backend {}: environment variable {var} is not set",
                            self.backend_id()
                        ));
                    }
                }
            }
            Provider::Scripted => {
                if self.script.is_none() {
                    return bad(format!(
                        "backend {}: scripted provider needs `script`",
                        self.backend_id()
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Arc<dyn Backend>, GatewayError> {
        self.validate()?;
        Ok(match self.provider {
            Provider::OpenaiCompatible => {
                let api_key = self.auth_env.as_ref().and_then(|v| std::env::var(v).ok());
                Arc::new(OpenAiCompatBackend::new(
                    self.backend_id(),
                    self.endpoint.clone().unwrap_or_default(),
                    self.model.clone(),
                    api_key,
                    Duration::from_secs(self.timeout_secs),
                ))
            }
            Provider::Scripted => {
                let path = self.script.as_ref().expect("validated");
                let script =
                    Script::load(path).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
                Arc::new(ScriptedBackend::new(self.backend_id(), script))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_attempts: 5,
            initial_backoff_ms: 100,
            max_backoff_ms: 300,
        };
        assert_eq!(p.backoff(1), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(200));
        assert_eq!(p.backoff(3), Duration::from_millis(300));
    }

    #[test]
    fn parses_toml_entry() {
        let cfg: BackendConfig = toml::from_str(
            r#"
            provider = "openai_compatible"
            endpoint = "http://localhost:8000/v1/chat/completions"
            model = "Qwen2.5-Omni-7B"
            rate_limit = { requests_per_second = 2.0, burst = 4 }
            retry = { max_attempts = 5 }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.backend_id(), "Qwen2.5-Omni-7B");
        assert_eq!(cfg.retry.max_attempts, 5);
        assert_eq!(cfg.retry.initial_backoff_ms, 500);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn missing_credentials_fail_validation() {
        let cfg = BackendConfig {
            provider: Provider::OpenaiCompatible,
            model: "m".into(),
            backend_id: None,
            endpoint: Some("http://x".into()),
            auth_env: Some("SOUNDCOT_TEST_SURELY_UNSET_VAR".into()),
            script: None,
            rate_limit: None,
            retry: RetryPolicy::default(),
            timeout_secs: 5,
        };
        assert!(matches!(cfg.validate(), Err(GatewayError::Config(_))));
    }
}
