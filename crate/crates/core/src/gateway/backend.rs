use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::template::Bindings;

/// What a backend sees for one call.
#[derive(Debug, Clone, Copy)]
pub struct BackendRequest<'a> {
    pub template_id: &'a str,
    pub prompt: &'a str,
    pub bindings: &'a Bindings,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub text: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

impl BackendReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), tokens_in: 0, tokens_out: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("rate limited by backend")]
    RateLimited { retry_after: Option<Duration> },
}

/// A chat-completion provider.
pub trait Backend: Send + Sync {
    /// Stable identifier, part of the cache key.
    fn id(&self) -> String;
    fn complete(&self, request: &BackendRequest<'_>) -> Result<BackendReply, BackendError>;
}

/// Key under which a backend reply is recorded in a transcript: the prompt
/// and temperature, independent of which backend produced it.
pub fn transcript_key(prompt: &str, temperature: f64) -> String {
    let mut h = Sha256::new();
    h.update(temperature.to_bits().to_le_bytes());
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

/// One recorded backend call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub key: String,
    pub template_id: String,
    pub response: String,
}

/// OpenAI-style `/chat/completions` client.
pub struct LiveBackend {
    url: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

pub const ENV_KEY: &str = "SOCPILOT_LLM_KEY";
pub const ENV_URL: &str = "SOCPILOT_LLM_URL";
pub const ENV_MODEL: &str = "SOCPILOT_LLM_MODEL";

impl LiveBackend {
    pub fn new(url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self { url: url.into(), model: model.into(), api_key, agent }
    }

    /// Reads URL, model and key from the `SOCPILOT_LLM_*` environment.
    pub fn from_env() -> Result<Self, BackendError> {
        let url = std::env::var(ENV_URL).map_err(|_| BackendError::Unavailable(format!("{ENV_URL} is not set")))?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".to_string());
        Ok(Self::new(url, model, std::env::var(ENV_KEY).ok()))
    }

    fn endpoint(&self) -> String {
        let base = self.url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

impl Backend for LiveBackend {
    fn id(&self) -> String {
        format!("live:{}@{}", self.model, self.url)
    }

    fn complete(&self, request: &BackendRequest<'_>) -> Result<BackendReply, BackendError> {
        let body = json!({
            "model": self.model,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let mut req = self.agent.post(&self.endpoint()).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 {
            let retry_after = resp
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse::<u64>().ok())
                .map(Duration::from_secs);
            return Err(BackendError::RateLimited { retry_after });
        }
        let value: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Unavailable(format!("HTTP {status}: unreadable body: {e}")))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Unavailable(format!("HTTP {status}: {value}")));
        }
        let text = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::Unavailable(format!("response has no message content: {value}")))?
            .to_string();
        Ok(BackendReply {
            text,
            tokens_in: value["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            tokens_out: value["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        })
    }
}

/// Serves responses recorded in a gateway transcript, so a live run can be
/// reproduced offline.
pub struct ReplayBackend {
    responses: BTreeMap<String, String>,
}

impl ReplayBackend {
    pub fn new(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        Self { responses: entries.into_iter().map(|e| (e.key, e.response)).collect() }
    }

    /// Reads a JSON-lines transcript.
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let e: TranscriptEntry = serde_json::from_str(line).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            entries.push(e);
        }
        Ok(Self::new(entries))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn id(&self) -> String {
        "replay".to_string()
    }

    fn complete(&self, request: &BackendRequest<'_>) -> Result<BackendReply, BackendError> {
        let key = transcript_key(request.prompt, request.temperature);
        self.responses
            .get(&key)
            .map(|t| BackendReply::text(t.clone()))
            .ok_or_else(|| BackendError::Unavailable(format!("no recorded response for `{}` prompt {key}", request.template_id)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_serves_recorded_text() {
        let b = Bindings::new();
        let req = BackendRequest { template_id: "t", prompt: "hello", bindings: &b, temperature: 1.0 };
        let replay = ReplayBackend::new([TranscriptEntry {
            key: transcript_key("hello", 1.0),
            template_id: "t".into(),
            response: "world".into(),
        }]);
        assert_eq!(replay.complete(&req).unwrap().text, "world");
        let other = BackendRequest { prompt: "hello", temperature: 0.5, ..req };
        assert!(replay.complete(&other).is_err());
    }

    #[test]
    fn endpoint_suffix() {
        assert_eq!(LiveBackend::new("http://x/v1/", "m", None).endpoint(), "http://x/v1/chat/completions");
        assert_eq!(LiveBackend::new("http://x/v1/chat/completions", "m", None).endpoint(), "http://x/v1/chat/completions");
    }
}
