//! Chat-completion backends: a live HTTP client, a scripted mock and
//! record/replay transcripts, plus retry and rate-limit policy.

mod http;
mod mock;
mod policy;
mod transcript;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig, API_KEY_VAR, ENDPOINT_VAR};
pub use mock::{MockBackend, MockRule, MockScript};
pub use policy::{
    execute_with_policy, Clock, ErrorClass, PolicyBackend, RateLimiter, RetryPolicy, SystemClock,
    VirtualClock,
};
pub use transcript::{ChatTranscript, RecordingBackend, ReplayBackend, TranscriptEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
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
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// Single-turn request with one user message.
    pub fn user(content: impl Into<String>, model: impl Into<String>, temperature: f64, max_tokens: u32) -> Self {
        Self {
            messages: vec![ChatMessage::user(content)],
            model: model.into(),
            temperature,
            max_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let invalid = |msg: &str| Err(BackendError::InvalidRequest(msg.to_string()));
        match self.messages.last() {
            None => return invalid("request has no messages"),
            Some(last) if last.role != Role::User => return invalid("last message must come from the user"),
            _ => {}
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return invalid("temperature must be a finite number >= 0");
        }
        if self.max_tokens == 0 {
            return invalid("max_tokens must be positive");
        }
        Ok(())
    }

    /// Text of the final user message.
    pub fn prompt(&self) -> &str {
        self.messages.last().map_or("", |m| m.content.as_str())
    }
}

/// Lowercase hex SHA-256 of the canonical request. `max_tokens` is left out
/// so that replays survive budget changes.
pub fn request_hash(request: &ChatRequest) -> String {
    #[derive(Serialize)]
    struct Canonical<'a> {
        model: &'a str,
        temperature: f64,
        messages: &'a [ChatMessage],
    }
    let canonical = Canonical {
        model: &request.model,
        temperature: request.temperature,
        messages: &request.messages,
    };
    let bytes = serde_json::to_vec(&canonical).expect("request serializes");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

impl ChatResponse {
    pub fn stop(content: impl Into<String>) -> Self {
        Self {
            content: content.into(),
            finish_reason: FinishReason::Stop,
            usage: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("server error {status}: {message}")]
    ServerError { status: u16, message: String },
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("not authorized ({status}): {message}")]
    Unauthorized { status: u16, message: String },
    #[error("request rejected ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no transcript entry for request {hash}")]
    ReplayMiss { hash: String },
    #[error("mock script exhausted after {calls} calls")]
    ScriptExhausted { calls: usize },
    #[error("transcript error: {0}")]
    Transcript(String),
    #[error("gave up after {} attempts: {last}", history.len())]
    RetriesExhausted {
        /// One entry per failed attempt, oldest first.
        history: Vec<String>,
        last: Box<BackendError>,
    },
}

impl BackendError {
    pub fn class(&self) -> ErrorClass {
        match self {
            BackendError::RateLimited(_) => ErrorClass::RateLimited,
            BackendError::ServerError { .. } => ErrorClass::ServerError,
            BackendError::Timeout(_) => ErrorClass::Timeout,
            BackendError::RetriesExhausted { last, .. } => last.class(),
            _ => ErrorClass::Fatal,
        }
    }

    /// The underlying error once retries are unwrapped.
    pub fn root(&self) -> &BackendError {
        match self {
            BackendError::RetriesExhausted { last, .. } => last.root(),
            other => other,
        }
    }
}

/// Anything that answers chat requests. Implementations are shared across
/// threads by the pipeline.
pub trait Backend: Send + Sync {
    /// Identifier recorded in manifests and provenance.
    fn id(&self) -> String;

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}
