//! Chat-completion backends.
//!
//! [`HttpBackend`] speaks the OpenAI-compatible `/chat/completions` wire
//! format. [`ScriptedBackend`] replays canned responses and records every
//! request it receives, which is what the tests and session replay use.

mod http;
mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{BackendConfig, HttpBackend, HttpStats, API_KEY_ENV};
pub use scripted::{Script, ScriptEntry, ScriptedBackend};

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
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
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

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("unparseable response body: {0}")]
    ProtocolError(String),
    #[error("server error {status} after {attempts} attempt(s)")]
    Server { status: u16, attempts: u32 },
    #[error("request rejected with status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
    #[error("script exhausted after {len} response(s)")]
    ScriptExhausted { len: usize },
    /// A failure reproduced from a session record.
    #[error("{0}")]
    Replayed(String),
}

/// Anything that can answer a chat-completion request.
///
/// Implementations are shared across sessions, so they take `&self`.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError>;

    /// Whether identical requests are guaranteed to produce identical
    /// responses.
    fn is_deterministic(&self) -> bool {
        false
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        (**self).complete(messages)
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

pub(crate) fn check_request(messages: &[ChatMessage]) -> Result<(), LlmError> {
    let first = messages
        .first()
        .ok_or_else(|| LlmError::InvalidRequest("no messages".into()))?;
    if first.role != Role::System {
        return Err(LlmError::InvalidRequest(
            "first message must be the system prompt".into(),
        ));
    }
    if let Some(i) = messages
        .iter()
        .position(|m| m.role != Role::Assistant && m.content.trim().is_empty())
    {
        return Err(LlmError::InvalidRequest(format!("message {i} is empty")));
    }
    Ok(())
}
