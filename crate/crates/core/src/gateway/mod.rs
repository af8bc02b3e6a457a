//! The single choke point for model calls.
//!
//! A [`Gateway`] wraps one [`Backend`] (OpenAI-compatible HTTP or the
//! scripted mock) and bounds the number of requests in flight. A
//! [`ModelClient`] binds a gateway to one model and its sampling settings.

mod http;
mod limiter;
mod mock;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelId;

pub use http::{HttpBackend, RetryPolicy};
pub use limiter::{InFlightLimiter, Permit};
pub use mock::{mock_program, MockBackend, MockMatcher, MockRule, MockScript};

pub const DEFAULT_API_KEY_ENV: &str = "PROMPTBRIDGE_API_KEY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("transport failed after {} attempt(s): {}", attempts.len(), attempts.join("; "))]
    Transport { attempts: Vec<String> },
    #[error("protocol error: {message} (payload excerpt: {excerpt:?})")]
    Protocol { message: String, excerpt: String },
}

impl GatewayError {
    /// Transport and protocol failures, as opposed to caller mistakes.
    pub fn is_remote_failure(&self) -> bool {
        matches!(self, GatewayError::Transport { .. } | GatewayError::Protocol { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: ModelId,
    pub messages: Vec<Message>,
    /// `None` omits the field on the wire, for hosts that reject it.
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub seed_hint: Option<i64>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if self.messages.last().map(|m| m.role) != Some(Role::User) {
            return Err(GatewayError::InvalidRequest("last message must come from the user".into()));
        }
        if let Some(t) = self.temperature {
            if !(t.is_finite() && t >= 0.0) {
                return Err(GatewayError::InvalidRequest(format!("temperature {t} < 0")));
            }
        }
        if self.max_tokens == Some(0) {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Flat text form used by mock matchers: `[role]\ncontent\n` per message.
    pub fn rendered(&self) -> String {
        self.messages
            .iter()
            .map(|m| format!("[{}]\n{}\n", m.role.as_str(), m.content))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
}

/// Something that can answer chat and embedding requests.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
    fn embed(&self, texts: &[String], model: &ModelId) -> Result<Vec<Vec<f64>>, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
}

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}
fn default_max_in_flight() -> usize {
    8
}
fn default_timeout_ms() -> u64 {
    120_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockScript>,
}

impl BackendConfig {
    pub fn mock(script: MockScript) -> Self {
        Self {
            kind: BackendKind::Mock,
            base_url: None,
            api_key_env: default_api_key_env(),
            max_in_flight: default_max_in_flight(),
            retry: RetryPolicy::default(),
            timeout_ms: default_timeout_ms(),
            mock: Some(script),
        }
    }

    pub fn http(base_url: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Http,
            base_url: Some(base_url.into()),
            mock: None,
            ..Self::mock(MockScript::default())
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be positive".into()));
        }
        if self.timeout_ms == 0 {
            return Err(GatewayError::Config("timeout_ms must be positive".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(GatewayError::Config("retry.max_attempts must be at least 1".into()));
        }
        if self.kind == BackendKind::Http && self.base_url.as_deref().is_none_or(str::is_empty) {
            return Err(GatewayError::Config("http backend requires base_url".into()));
        }
        Ok(())
    }
}

/// Thread-safe handle to one backend with an in-flight bound.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    limiter: InFlightLimiter,
    chat_calls: AtomicU64,
    embed_calls: AtomicU64,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("max_in_flight", &self.limiter.capacity())
            .field("chat_calls", &self.chat_calls())
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, max_in_flight: usize) -> Self {
        Self {
            backend,
            limiter: InFlightLimiter::new(max_in_flight.max(1)),
            chat_calls: AtomicU64::new(0),
            embed_calls: AtomicU64::new(0),
        }
    }

    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let backend: Arc<dyn Backend> = match config.kind {
            BackendKind::Http => Arc::new(HttpBackend::from_config(config)?),
            BackendKind::Mock => Arc::new(MockBackend::new(config.mock.clone().unwrap_or_default())?),
        };
        Ok(Self::new(backend, config.max_in_flight))
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let _permit = self.limiter.acquire();
        self.chat_calls.fetch_add(1, Ordering::Relaxed);
        self.backend.complete(request)
    }

    pub fn embed(&self, texts: &[String], model: &ModelId) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest("nothing to embed".into()));
        }
        if let Some(i) = texts.iter().position(|t| t.is_empty()) {
            return Err(GatewayError::InvalidRequest(format!("text #{i} is empty")));
        }
        let vectors = {
            let _permit = self.limiter.acquire();
            self.embed_calls.fetch_add(1, Ordering::Relaxed);
            self.backend.embed(texts, model)?
        };
        if vectors.len() != texts.len() {
            return Err(GatewayError::Protocol {
                message: format!("expected {} embeddings, got {}", texts.len(), vectors.len()),
                excerpt: String::new(),
            });
        }
        let dim = vectors[0].len();
        if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
            return Err(GatewayError::Protocol {
                message: "embeddings have inconsistent dimensionality".into(),
                excerpt: String::new(),
            });
        }
        Ok(vectors)
    }

    pub fn chat_calls(&self) -> u64 {
        self.chat_calls.load(Ordering::Relaxed)
    }

    pub fn embed_calls(&self) -> u64 {
        self.embed_calls.load(Ordering::Relaxed)
    }

    pub fn limiter(&self) -> &InFlightLimiter {
        &self.limiter
    }
}

/// Per-model sampling settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub name: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub omit_temperature: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_hint: Option<i64>,
}

impl ModelSettings {
    pub fn named(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            temperature: 0.0,
            omit_temperature: false,
            max_tokens: None,
            seed_hint: None,
        }
    }
}

/// A gateway bound to one model.
#[derive(Debug, Clone)]
pub struct ModelClient {
    gateway: Arc<Gateway>,
    model: ModelId,
    settings: ModelSettings,
}

impl ModelClient {
    pub fn new(gateway: Arc<Gateway>, model: ModelId, settings: ModelSettings) -> Self {
        Self { gateway, model, settings }
    }

    pub fn model(&self) -> &ModelId {
        &self.model
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn request(&self, messages: Vec<Message>) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            messages,
            temperature: (!self.settings.omit_temperature).then_some(self.settings.temperature),
            max_tokens: self.settings.max_tokens,
            seed_hint: self.settings.seed_hint,
        }
    }

    pub fn chat(&self, messages: Vec<Message>) -> Result<ChatResponse, GatewayError> {
        self.gateway.complete(&self.request(messages))
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        self.gateway.embed(texts, &self.model)
    }
}
