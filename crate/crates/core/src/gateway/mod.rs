//! Chat-completion backends behind one blocking interface.
//!
//! [`http::OpenAiBackend`] talks to any OpenAI-compatible endpoint. The
//! offline backends are [`mock::ScriptedMock`], driven by rule scripts, and
//! the seeded simulator [`simulator::BiasedAgent`]. [`Gateway`] adds request
//! validation and, optionally, the on-disk response cache.

pub mod cache;
pub mod http;
pub mod mock;
pub mod scripts;
pub mod session;
pub mod simulator;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, DiskCache};
pub use mock::{MockScript, ScriptedMock};
pub use session::{CallParams, Session, Transcript, Turn};
pub use simulator::{BiasedAgent, BiasedAgentConfig};

/// Environment variable holding the bearer token for the HTTP backend.
pub const API_KEY_ENV: &str = "COGDEBIAS_API_KEY";

pub const DEFAULT_MAX_TOKENS: u32 = 512;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("malformed upstream payload: {0}")]
    MalformedUpstream(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("environment variable {0} is not set")]
    MissingApiKey(&'static str),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("mock script error: {0}")]
    Script(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }

    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }
}

/// What a call is for. Never sent over the wire; scripted backends key on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallPurpose {
    #[default]
    Decision,
    Feedback,
    Revision,
    Proposal,
    Debate,
    Aggregate,
    Rewrite,
    Determination,
    Analysis,
    Debias,
}

impl CallPurpose {
    /// Calls whose output is a task answer.
    pub fn is_answer(self) -> bool {
        matches!(
            self,
            CallPurpose::Decision
                | CallPurpose::Revision
                | CallPurpose::Proposal
                | CallPurpose::Debate
                | CallPurpose::Aggregate
        )
    }
}

/// Experiment bookkeeping attached to a request. Not part of the wire
/// payload or the cache key; the simulator uses it to pick its draw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub instance_id: String,
    /// Random stream of the experiment arm (0 = control).
    pub arm_stream: u64,
    /// Position of the instance in id order; index into the arm's stream.
    pub draw_index: u64,
    pub treatment: bool,
    pub target_label: String,
    pub option_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub purpose: CallPurpose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<TrialMeta>,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        ChatRequest {
            model_id: model_id.into(),
            messages,
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            purpose: CallPurpose::Decision,
            meta: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let last = self
            .messages
            .last()
            .ok_or_else(|| GatewayError::InvalidRequest("messages are empty".into()))?;
        if last.role != Role::User {
            return Err(GatewayError::InvalidRequest("last message must have role user".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be a finite value >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Content of the final (user) message.
    pub fn last_user(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub backend_id: String,
    pub cached: bool,
    pub latency_ms: u64,
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request)
    }
}

/// Validating front door over a backend, with an optional response cache.
pub struct Gateway {
    inner: Box<dyn Backend>,
    cache: Option<DiskCache>,
}

impl Gateway {
    pub fn new(inner: Box<dyn Backend>) -> Self {
        Gateway { inner, cache: None }
    }

    pub fn with_cache(mut self, cache: DiskCache) -> Self {
        self.cache = Some(cache);
        self
    }
}

impl Backend for Gateway {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let Some(cache) = &self.cache else {
            return self.inner.complete(request);
        };
        let key = cache_key(request);
        if let Some(entry) = cache.get(&key)? {
            return Ok(ChatResponse {
                content: entry.content,
                backend_id: self.inner.id().to_string(),
                cached: true,
                latency_ms: 0,
            });
        }
        let response = self.inner.complete(request)?;
        cache.put(&key, request, &response.content)?;
        Ok(response)
    }
}
