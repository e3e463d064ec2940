//! OpenAI-compatible chat-completion backend.

use std::time::{Duration, Instant};

use serde_json::{json, Map, Value};

use super::{Narrator, NarratorError, NarratorRequest, NarratorResponse};

#[derive(Debug, Clone, PartialEq)]
pub struct LiveConfig {
    /// Full chat-completions endpoint, e.g. `http://localhost:8000/v1/chat/completions`.
    pub url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    /// Extra body fields passed through untouched (temperature, top_p, ...).
    pub extra: Map<String, Value>,
}

impl LiveConfig {
    pub const DEFAULT_TIMEOUT_MS: u64 = 60_000;

    /// Reads `NARRATOR_URL`, `NARRATOR_API_KEY`, `NARRATOR_MODEL`,
    /// `NARRATOR_TIMEOUT_MS` and the optional JSON object `NARRATOR_PARAMS`.
    pub fn from_env() -> Result<Self, String> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        let url = get("NARRATOR_URL").ok_or("NARRATOR_URL is not set")?;
        let model = get("NARRATOR_MODEL").unwrap_or_else(|| "gpt-3.5-turbo".to_string());
        let timeout_ms = match get("NARRATOR_TIMEOUT_MS") {
            Some(raw) => raw
                .trim()
                .parse::<u64>()
                .map_err(|e| format!("NARRATOR_TIMEOUT_MS: {e}"))?,
            None => Self::DEFAULT_TIMEOUT_MS,
        };
        let extra = match get("NARRATOR_PARAMS") {
            Some(raw) => match serde_json::from_str::<Value>(&raw) {
                Ok(Value::Object(map)) => map,
                Ok(_) => return Err("NARRATOR_PARAMS must be a JSON object".into()),
                Err(e) => return Err(format!("NARRATOR_PARAMS: {e}")),
            },
            None => Map::new(),
        };
        Ok(Self {
            url,
            api_key: get("NARRATOR_API_KEY").filter(|k| !k.is_empty()),
            model,
            timeout: Duration::from_millis(timeout_ms),
            extra,
        })
    }
}

pub struct LiveNarrator {
    config: LiveConfig,
    client: reqwest::blocking::Client,
}

impl LiveNarrator {
    pub fn new(config: LiveConfig) -> Result<Self, NarratorError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| NarratorError::Transport(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn backend_id(&self) -> String {
        format!("live:{}", self.config.model)
    }

    fn body(&self, request: &NarratorRequest) -> Value {
        let mut body = self.config.extra.clone();
        body.insert("model".into(), json!(self.config.model));
        body.insert(
            "messages".into(),
            json!([
                {"role": "system", "content": request.system_context},
                {"role": "user", "content": request.user_context},
            ]),
        );
        body.insert("max_tokens".into(), json!(request.max_reply_tokens));
        Value::Object(body)
    }
}

/// Keeps at most `max_tokens` whitespace-delimited tokens, preserving the
/// spacing between the ones kept.
pub(crate) fn truncate_tokens(text: &str, max_tokens: u32) -> &str {
    let mut seen = 0u32;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_token = false;
        } else if !in_token {
            in_token = true;
            if seen == max_tokens {
                return text[..i].trim_end();
            }
            seen += 1;
        }
    }
    text
}

fn extract_content(body: &Value) -> Option<&str> {
    body.get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
}

impl Narrator for LiveNarrator {
    fn complete(&self, request: &NarratorRequest) -> Result<NarratorResponse, NarratorError> {
        request.validate()?;
        let started = Instant::now();
        let mut call = self.client.post(&self.config.url).json(&self.body(request));
        if let Some(key) = &self.config.api_key {
            call = call.bearer_auth(key);
        }
        let response = call
            .send()
            .map_err(|e| NarratorError::Transport(e.to_string()))?;
        let status = response.status();
        let raw = response
            .text()
            .map_err(|e| NarratorError::Transport(e.to_string()))?;
        if !status.is_success() {
            let mut body = raw;
            body.truncate(512);
            return Err(NarratorError::Status {
                status: status.as_u16(),
                body,
            });
        }
        let parsed: Value =
            serde_json::from_str(&raw).map_err(|e| NarratorError::Malformed(e.to_string()))?;
        let content = extract_content(&parsed)
            .ok_or_else(|| NarratorError::Malformed("missing choices[0].message.content".into()))?;
        let text = truncate_tokens(content.trim(), request.max_reply_tokens).to_string();
        if text.is_empty() {
            return Err(NarratorError::Malformed("empty completion".into()));
        }
        Ok(NarratorResponse {
            text,
            backend_id: self.backend_id(),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}
