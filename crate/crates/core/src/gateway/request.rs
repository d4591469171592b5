use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GatewayError;

/// Which family of model answers a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BackendKind {
    /// Text-only language model.
    Llm,
    /// Audio language model; every request carries an audio clip.
    Alm,
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendKind::Llm => f.write_str("LLM"),
            BackendKind::Alm => f.write_str("ALM"),
        }
    }
}

/// A reference to an audio clip. The framework never decodes audio; the
/// URI is handed to the ALM backend as-is (local files are inlined).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioRef {
    pub uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    #[serde(default)]
    pub dataset_id: String,
    #[serde(default)]
    pub sample_id: String,
}

impl AudioRef {
    pub fn new(uri: impl Into<String>, dataset_id: impl Into<String>, sample_id: impl Into<String>) -> Self {
        Self {
            uri: uri.into(),
            duration: None,
            dataset_id: dataset_id.into(),
            sample_id: sample_id.into(),
        }
    }

    /// True when the URI carries a scheme other than `file://`
    /// (`https://`, `s3://`, …): the backend resolves it, not us.
    pub fn is_remote(&self) -> bool {
        match self.uri.split_once("://") {
            Some((scheme, _)) => {
                scheme != "file"
                    && !scheme.is_empty()
                    && scheme
                        .chars()
                        .all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'))
            }
            None => false,
        }
    }

    /// Local filesystem path, if the URI is a plain path or a `file://` URI.
    pub fn local_path(&self) -> Option<&str> {
        if self.is_remote() {
            None
        } else {
            Some(self.uri.strip_prefix("file://").unwrap_or(&self.uri))
        }
    }

    /// Checks the clip can be handed to a backend.
    pub fn check_resolvable(&self) -> Result<(), GatewayError> {
        if self.uri.trim().is_empty() {
            return Err(GatewayError::InvalidAudio {
                uri: self.uri.clone(),
                reason: "empty uri".into(),
            });
        }
        if let Some(duration) = self.duration {
            if duration.is_nan() || duration <= 0.0 {
                return Err(GatewayError::InvalidAudio {
                    uri: self.uri.clone(),
                    reason: format!("non-positive duration {duration}"),
                });
            }
        }
        if let Some(path) = self.local_path() {
            match std::fs::metadata(path) {
                Ok(meta) if meta.is_file() => {}
                Ok(_) => {
                    return Err(GatewayError::InvalidAudio {
                        uri: self.uri.clone(),
                        reason: "not a regular file".into(),
                    })
                }
                Err(e) => {
                    return Err(GatewayError::InvalidAudio {
                        uri: self.uri.clone(),
                        reason: e.to_string(),
                    })
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            text: text.into(),
        }
    }
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
        }
    }
    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            text: text.into(),
        }
    }
}

/// Decoding settings. Defaults are greedy with a fixed seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 1024,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub backend_kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<AudioRef>,
    pub messages: Vec<Message>,
    #[serde(default)]
    pub decode_params: DecodeParams,
}

impl ModelRequest {
    /// Single-turn text request for the LLM.
    pub fn llm(prompt: impl Into<String>) -> Self {
        Self {
            backend_kind: BackendKind::Llm,
            audio: None,
            messages: vec![Message::user(prompt)],
            decode_params: DecodeParams::default(),
        }
    }

    /// Single-turn request for the ALM about `audio`.
    pub fn alm(audio: AudioRef, prompt: impl Into<String>) -> Self {
        Self {
            backend_kind: BackendKind::Alm,
            audio: Some(audio),
            messages: vec![Message::user(prompt)],
            decode_params: DecodeParams::default(),
        }
    }

    pub fn with_decode(mut self, params: DecodeParams) -> Self {
        self.decode_params = params;
        self
    }

    /// Continue the conversation: append the model's previous reply and a
    /// new user turn. Used for protocol retries so the retry has its own
    /// cache key.
    pub fn follow_up(&self, reply: &str, prompt: impl Into<String>) -> Self {
        let mut next = self.clone();
        next.messages.push(Message::assistant(reply));
        next.messages.push(Message::user(prompt));
        next
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let invalid = |reason: &str| Err(GatewayError::InvalidRequest(reason.to_string()));
        match (self.backend_kind, &self.audio) {
            (BackendKind::Alm, None) => return invalid("ALM request without audio"),
            (BackendKind::Llm, Some(_)) => return invalid("LLM request carries audio"),
            _ => {}
        }
        match self.messages.last() {
            None => invalid("no messages"),
            Some(m) if m.role != Role::User => invalid("last message is not from the user"),
            Some(_) if self.decode_params.temperature.is_nan() || self.decode_params.temperature < 0.0 => {
                invalid("negative temperature")
            }
            Some(_) => Ok(()),
        }
    }

    /// Canonical serialization: fixed field order, message text verbatim.
    pub fn canonical(&self) -> String {
        #[derive(Serialize)]
        struct CanonAudio<'a> {
            uri: &'a str,
            dataset_id: &'a str,
            sample_id: &'a str,
        }
        #[derive(Serialize)]
        struct Canon<'a> {
            kind: BackendKind,
            audio: Option<CanonAudio<'a>>,
            messages: &'a [Message],
            temperature: f64,
            max_tokens: u32,
            seed: u64,
        }
        let canon = Canon {
            kind: self.backend_kind,
            audio: self.audio.as_ref().map(|a| CanonAudio {
                uri: &a.uri,
                dataset_id: &a.dataset_id,
                sample_id: &a.sample_id,
            }),
            messages: &self.messages,
            temperature: self.decode_params.temperature,
            max_tokens: self.decode_params.max_tokens,
            seed: self.decode_params.seed,
        };
        serde_json::to_string(&canon).expect("canonical request serializes")
    }

    /// Content address of this request as answered by `backend_id`.
    pub fn digest(&self, backend_id: &str) -> RequestDigest {
        let mut hasher = Sha256::new();
        hasher.update(backend_id.as_bytes());
        hasher.update([0u8]);
        hasher.update(self.canonical().as_bytes());
        RequestDigest(hex::encode(hasher.finalize()))
    }

    /// Text of the final user turn.
    pub fn prompt(&self) -> &str {
        self.messages.last().map(|m| m.text.as_str()).unwrap_or("")
    }
}

/// Lowercase hex SHA-256 of `(backend_id, canonical request)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestDigest(pub String);

impl RequestDigest {
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        (s.len() == 64 && s.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()))
            .then(|| RequestDigest(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for RequestDigest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub backend_id: String,
    pub cached: bool,
    pub latency_ms: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_depends_on_backend_and_whitespace() {
        let req = ModelRequest::llm("hello  world");
        let a = req.digest("b1");
        assert_eq!(a, req.clone().digest("b1"));
        assert_ne!(a, req.digest("b2"));
        assert_ne!(a, ModelRequest::llm("hello world").digest("b1"));
        assert!(RequestDigest::parse(a.as_str()).is_some());
    }

    #[test]
    fn validation_rules() {
        assert!(ModelRequest::llm("x").validate().is_ok());
        let mut alm = ModelRequest::llm("x");
        alm.backend_kind = BackendKind::Alm;
        assert!(alm.validate().is_err());
        let mut llm = ModelRequest::alm(AudioRef::new("a.wav", "d", "s"), "x");
        llm.backend_kind = BackendKind::Llm;
        assert!(llm.validate().is_err());
        let mut ends_with_assistant = ModelRequest::llm("x");
        ends_with_assistant.messages.push(Message::assistant("y"));
        assert!(ends_with_assistant.validate().is_err());
        let mut empty = ModelRequest::llm("x");
        empty.messages.clear();
        assert!(empty.validate().is_err());
    }

    #[test]
    fn digest_ignores_duration() {
        let mut audio = AudioRef::new("a.wav", "d", "s");
        let a = ModelRequest::alm(audio.clone(), "p").digest("x");
        audio.duration = Some(3.0);
        assert_eq!(a, ModelRequest::alm(audio, "p").digest("x"));
    }
}
