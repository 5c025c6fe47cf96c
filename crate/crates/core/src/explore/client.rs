//! Chat-completion transport: request/response types, retries, the HTTP
//! client, and transcript record/replay.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::jsonl;

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_TOKENS: u32 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// Single user-message request with the default sampling settings.
    pub fn user(model: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt.into(),
            }],
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn last_user_content(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map_or("", |m| m.content.as_str())
    }

    /// Content hash used as the transcript key.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClientError {
    /// Worth retrying: connection failures, timeouts, 429 and 5xx.
    #[error("transient: {0}")]
    Transient(String),
    #[error("{0}")]
    Fatal(String),
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, ClientError>;
}

impl<C: ChatClient + ?Sized> ChatClient for &C {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, ClientError> {
        (**self).complete(request)
    }
}

impl<C: ChatClient + ?Sized> ChatClient for Box<C> {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, ClientError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_delay: Duration,
    pub multiplier: f64,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_delay: Duration::from_millis(500),
            multiplier: 2.0,
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            initial_delay: Duration::ZERO,
            ..Self::default()
        }
    }

    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = self.multiplier.powi(retry.saturating_sub(1) as i32);
        self.initial_delay.mul_f64(factor).min(self.max_delay)
    }
}

/// Issues the request, retrying transient failures with exponential backoff.
pub fn complete_with_retry(
    client: &dyn ChatClient,
    request: &ChatRequest,
    policy: &RetryPolicy,
) -> Result<ChatResponse> {
    let max = policy.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match client.complete(request) {
            Ok(resp) => return Ok(resp),
            Err(ClientError::Transient(msg)) if attempt < max => {
                log::warn!("attempt {attempt}/{max} failed: {msg}; retrying");
                std::thread::sleep(policy.delay(attempt));
            }
            Err(ClientError::Transient(message)) | Err(ClientError::Fatal(message)) => {
                return Err(Error::Transport {
                    attempts: attempt,
                    message,
                })
            }
        }
    }
}

/// Client for endpoints speaking the common `/chat/completions` JSON shape.
pub struct HttpChatClient {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

impl HttpChatClient {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            agent,
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
        }
    }

    /// Reads `LLM_API_BASE` and `LLM_API_KEY`.
    pub fn from_env(default_base: &str) -> Self {
        let base = std::env::var("LLM_API_BASE").unwrap_or_else(|_| default_base.to_string());
        let key = std::env::var("LLM_API_KEY").ok().filter(|k| !k.is_empty());
        Self::new(&base, key, Duration::from_secs(120))
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: ChatMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, ClientError> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(request)
            .map_err(|e| ClientError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(ClientError::Transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(ClientError::Fatal(format!("HTTP {status}: {body}")));
        }
        let wire: WireResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::Fatal(format!("bad response body: {e}")))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ClientError::Fatal("response has no choices".into()))?;
        Ok(ChatResponse {
            content: choice.message.content,
            finish_reason: choice.finish_reason.unwrap_or_default(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TranscriptEntry {
    key: String,
    request: ChatRequest,
    response: ChatResponse,
}

/// Wraps a client and keeps every successful exchange for later replay.
pub struct RecordingClient<C> {
    inner: C,
    entries: Mutex<BTreeMap<String, TranscriptEntry>>,
}

impl<C: ChatClient> RecordingClient<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            entries: Mutex::new(BTreeMap::new()),
        }
    }

    /// Writes the transcript sorted by request digest.
    pub fn save(&self, path: &Path) -> Result<()> {
        let entries = self.entries.lock().unwrap();
        let list: Vec<_> = entries.values().cloned().collect();
        jsonl::write_jsonl(path, &list)
    }
}

impl<C: ChatClient> ChatClient for RecordingClient<C> {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, ClientError> {
        let response = self.inner.complete(request)?;
        let key = request.digest();
        self.entries.lock().unwrap().insert(
            key.clone(),
            TranscriptEntry {
                key,
                request: request.clone(),
                response: response.clone(),
            },
        );
        Ok(response)
    }
}

/// Serves responses from a recorded transcript; unknown requests fail.
pub struct ReplayClient {
    responses: BTreeMap<String, ChatResponse>,
}

impl ReplayClient {
    pub fn load(path: &Path) -> Result<Self> {
        let entries: Vec<TranscriptEntry> = jsonl::read_jsonl(path)?;
        Ok(Self {
            responses: entries.into_iter().map(|e| (e.key, e.response)).collect(),
        })
    }
}

impl ChatClient for ReplayClient {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, ClientError> {
        let key = request.digest();
        self.responses
            .get(&key)
            .cloned()
            .ok_or_else(|| ClientError::Fatal(Error::ReplayMiss(key).to_string()))
    }
}
