//! OpenAI-compatible chat-completions backend.
//!
//! Works against any server exposing `POST /v1/chat/completions` (vLLM,
//! hosted APIs). Audio is sent as an `input_audio` content part (base64 of
//! the local file) or an `audio_url` part for remote URIs.

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::backend::{Backend, BackendError};
use super::request::{BackendKind, ModelRequest, RequestDigest, Role};

pub struct OpenAiCompatBackend {
    id: String,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl OpenAiCompatBackend {
    pub fn new(
        id: impl Into<String>,
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            id: id.into(),
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            agent,
        }
    }

    fn body(&self, req: &ModelRequest) -> Result<Value, BackendError> {
        let audio_part = match (&req.backend_kind, &req.audio) {
            (BackendKind::Alm, Some(audio)) => Some(if audio.is_remote() {
                json!({"type": "audio_url", "audio_url": {"url": audio.uri}})
            } else {
                let path = audio.local_path().unwrap_or_default();
                let bytes = std::fs::read(path).map_err(|e| BackendError::Permanent(format!("reading {path}: {e}")))?;
                let format = std::path::Path::new(path)
                    .extension()
                    .and_then(|e| e.to_str())
                    .unwrap_or("wav")
                    .to_ascii_lowercase();
                json!({
                    "type": "input_audio",
                    "input_audio": {
                        "data": base64::engine::general_purpose::STANDARD.encode(bytes),
                        "format": format,
                    }
                })
            }),
            _ => None,
        };
        let first_user = req.messages.iter().position(|m| m.role == Role::User);
        let mut audio_part = audio_part;
        let messages: Vec<Value> = req
            .messages
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                match (Some(i) == first_user, audio_part.take()) {
                    (true, Some(part)) => json!({
                        "role": role,
                        "content": [part, {"type": "text", "text": m.text}],
                    }),
                    (_, leftover) => {
                        audio_part = leftover;
                        json!({"role": role, "content": m.text})
                    }
                }
            })
            .collect();
        Ok(json!({
            "model": self.model,
            "messages": messages,
            "temperature": req.decode_params.temperature,
            "max_tokens": req.decode_params.max_tokens,
            "seed": req.decode_params.seed,
        }))
    }
}

impl Backend for OpenAiCompatBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &ModelRequest, _digest: &RequestDigest) -> Result<String, BackendError> {
        let body = self.body(req)?;
        let mut call = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(&body)
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        match status {
            200..=299 => {}
            408 | 429 | 500..=599 => return Err(BackendError::Transient(format!("HTTP {status}: {text}"))),
            _ => return Err(BackendError::Permanent(format!("HTTP {status}: {text}"))),
        }
        let parsed: Value =
            serde_json::from_str(&text).map_err(|e| BackendError::Transient(format!("bad JSON: {e}")))?;
        parsed["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Transient("response has no choices[0].message.content".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::AudioRef;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves `responses` in order, one per connection, and returns the
    /// request bodies it saw.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut length = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; length];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    #[test]
    fn sends_chat_request_and_reads_content() {
        let reply = r#"{"choices":[{"message":{"role":"assistant","content":"VALID: YES"}}]}"#;
        let (url, server) = serve(vec![(200, reply.to_string())]);
        let backend = OpenAiCompatBackend::new("llm", url, "Qwen3-8B", Some("k".into()), Duration::from_secs(5));
        let req = ModelRequest::llm("is it valid?");
        let text = backend.complete(&req, &req.digest("llm")).unwrap();
        assert_eq!(text, "VALID: YES");
        let bodies = server.join().unwrap();
        let sent: Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["model"], "Qwen3-8B");
        assert_eq!(sent["messages"][0]["content"], "is it valid?");
        assert_eq!(sent["temperature"], 0.0);
    }

    #[test]
    fn status_codes_map_to_error_classes() {
        let (url, server) = serve(vec![(503, "{}".into()), (400, "{}".into())]);
        let backend = OpenAiCompatBackend::new("llm", url, "m", None, Duration::from_secs(5));
        let req = ModelRequest::llm("x");
        let d = req.digest("llm");
        assert!(matches!(backend.complete(&req, &d), Err(BackendError::Transient(_))));
        assert!(matches!(backend.complete(&req, &d), Err(BackendError::Permanent(_))));
        server.join().unwrap();
    }

    #[test]
    fn local_audio_is_inlined() {
        let dir = tempfile::tempdir().unwrap();
        let wav = dir.path().join("clip.wav");
        std::fs::write(&wav, b"RIFF").unwrap();
        let reply = r#"{"choices":[{"message":{"content":"A dog barks."}}]}"#;
        let (url, server) = serve(vec![(200, reply.to_string())]);
        let backend = OpenAiCompatBackend::new("alm", url, "omni", None, Duration::from_secs(5));
        let req = ModelRequest::alm(
            AudioRef::new(wav.to_string_lossy(), "d", "s"),
            "Describe the audio in detail.",
        );
        assert_eq!(backend.complete(&req, &req.digest("alm")).unwrap(), "A dog barks.");
        let sent: Value = serde_json::from_str(&server.join().unwrap()[0]).unwrap();
        let content = &sent["messages"][0]["content"];
        assert_eq!(content[0]["type"], "input_audio");
        assert_eq!(content[0]["input_audio"]["data"], "UklGRg==");
        assert_eq!(content[0]["input_audio"]["format"], "wav");
        assert_eq!(content[1]["text"], "Describe the audio in detail.");
    }
}
