use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Completion, CompletionProvider, CompletionRequest, LlmError};

/// Chat-completions endpoint settings. Attempts cover the first request
/// too: `max_attempts = 3` means at most two retries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub request_timeout_secs: u64,
}

impl Default for ChatConfig {
    fn default() -> Self {
        ChatConfig {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo-0125".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_attempts: 3,
            initial_backoff_ms: 500,
            request_timeout_secs: 120,
        }
    }
}

impl ChatConfig {
    pub fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

pub struct ChatProvider {
    config: ChatConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    requests: AtomicUsize,
}

impl std::fmt::Debug for ChatProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatProvider")
            .field("config", &self.config)
            .field("requests", &self.requests)
            .finish()
    }
}

impl ChatProvider {
    pub fn new(config: ChatConfig) -> Result<Self, LlmError> {
        if config.endpoint.is_empty() || config.model.is_empty() {
            return Err(LlmError::Config("chat provider needs an endpoint and a model".into()));
        }
        if config.max_attempts == 0 {
            return Err(LlmError::Config("max_attempts must be at least 1".into()));
        }
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.request_timeout_secs)))
            .build()
            .into();
        let api_key = std::env::var(&config.api_key_env).ok();
        Ok(ChatProvider {
            config,
            agent,
            api_key,
            requests: AtomicUsize::new(0),
        })
    }

    /// HTTP requests sent so far, retries included.
    pub fn requests_sent(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    fn send_once(&self, body: &serde_json::Value) -> Result<Completion, LlmError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let mut req = self.agent.post(self.config.url());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(LlmError::Status { status, body: text });
        }
        parse_chat_response(&text)
    }
}

fn parse_chat_response(text: &str) -> Result<Completion, LlmError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| LlmError::BadResponse(e.to_string()))?;
    let content = value
        .pointer("/choices/0/message/content")
        .and_then(|v| v.as_str())
        .ok_or_else(|| LlmError::BadResponse("missing choices[0].message.content".into()))?;
    let tokens = value
        .pointer("/usage/total_tokens")
        .and_then(|v| v.as_u64())
        .unwrap_or(0);
    Ok(Completion {
        text: content.to_string(),
        tokens,
    })
}

impl CompletionProvider for ChatProvider {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, LlmError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{ "role": "user", "content": request.prompt }],
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_output_tokens,
        });
        let mut attempt = 1;
        loop {
            match self.send_once(&body) {
                Ok(c) => return Ok(c),
                Err(e) if e.is_retryable() && attempt < self.config.max_attempts => {
                    let delay = self.config.initial_backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                    warn!("{:?} attempt {attempt} failed ({e}); retrying in {delay} ms", request.kind);
                    thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}
