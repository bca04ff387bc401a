//! HTTP chat backend for OpenAI-style and Anthropic-style endpoints.

use std::time::Duration;

use log::warn;
use rand::Rng;
use serde_json::{json, Value};

use crate::backend::{BackendError, ChatBackend, ChatRequest, ChatResponse, TokenUsage};
use crate::payload::SYSTEM_MESSAGE;
use crate::profile::{BackendProfile, Provider};

const ANTHROPIC_VERSION: &str = "2023-06-01";

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    /// Scale each delay by a uniform factor in `[0.5, 1.5)`.
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(30),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let base = self.base_delay.saturating_mul(1u32 << retry.min(16)).min(self.max_delay);
        if self.jitter {
            base.mul_f64(rand::thread_rng().gen_range(0.5..1.5))
        } else {
            base
        }
    }
}

pub struct HttpBackend {
    id: String,
    profile: BackendProfile,
    credential: String,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

impl HttpBackend {
    /// Reads the credential from `profile.credential_env`; a missing or
    /// empty variable is an authentication error.
    pub fn new(profile: BackendProfile, retry: RetryPolicy, timeout: Duration) -> Result<Self, BackendError> {
        if profile.endpoint.is_empty() {
            return Err(BackendError::Protocol(format!("no endpoint configured for {}", profile.model_id)));
        }
        let credential = std::env::var(&profile.credential_env)
            .ok()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| BackendError::Auth(format!("environment variable {} is not set", profile.credential_env)))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpBackend { id: profile.model_id.clone(), profile, credential, client, retry })
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let p = &request.payload;
        match self.profile.provider {
            Provider::OpenAi => serde_json::to_value(p).expect("payload serializes"),
            Provider::Anthropic => json!({
                "model": p.model,
                "temperature": p.temperature,
                "top_p": p.top_p,
                "max_tokens": p.max_tokens,
                "system": p.messages.iter().find(|m| m.role == "system").map_or(SYSTEM_MESSAGE, |m| m.content.as_str()),
                "messages": p.messages.iter().filter(|m| m.role != "system").collect::<Vec<_>>(),
            }),
        }
    }

    fn attempt(&self, body: &Value) -> Result<ChatResponse, BackendError> {
        let mut req = self.client.post(&self.profile.endpoint).json(body);
        req = match self.profile.provider {
            Provider::OpenAi => req.bearer_auth(&self.credential),
            Provider::Anthropic => {
                req.header("x-api-key", &self.credential).header("anthropic-version", ANTHROPIC_VERSION)
            }
        };
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(BackendError::Auth(format!("HTTP {status}: {text}")));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transport(format!("HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(BackendError::Protocol(format!("HTTP {status}: {text}")));
        }
        let v: Value =
            serde_json::from_str(&text).map_err(|e| BackendError::Protocol(format!("response body: {e}")))?;
        parse_response(self.profile.provider, &v)
    }
}

fn parse_response(provider: Provider, v: &Value) -> Result<ChatResponse, BackendError> {
    let missing = |what: &str| BackendError::Protocol(format!("response lacks {what}"));
    let u = |key: &str| v["usage"][key].as_u64().unwrap_or(0);
    match provider {
        Provider::OpenAi => {
            let text =
                v["choices"][0]["message"]["content"].as_str().ok_or_else(|| missing("choices[0].message.content"))?;
            Ok(ChatResponse {
                text: text.to_string(),
                usage: TokenUsage { input: u("prompt_tokens"), output: u("completion_tokens") },
            })
        }
        Provider::Anthropic => {
            let blocks = v["content"].as_array().ok_or_else(|| missing("content"))?;
            let text: String = blocks
                .iter()
                .filter(|b| b["type"] == "text")
                .filter_map(|b| b["text"].as_str())
                .collect::<Vec<_>>()
                .join("");
            Ok(ChatResponse { text, usage: TokenUsage { input: u("input_tokens"), output: u("output_tokens") } })
        }
    }
}

impl ChatBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let body = self.body(request);
        let mut retry = 0;
        loop {
            match self.attempt(&body) {
                Err(e) if e.is_retryable() && retry < self.retry.max_retries => {
                    let delay = self.retry.delay(retry);
                    warn!("{}: {e}; retrying in {:?}", self.id, delay);
                    std::thread::sleep(delay);
                    retry += 1;
                }
                other => return other,
            }
        }
    }
}
