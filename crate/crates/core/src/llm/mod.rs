//! The LLM side of data collection: the chat-completion client contract,
//! prompt builders, structured-reply parsing and self-verification.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[cfg(feature = "http")]
mod http;
pub mod mock;
mod prompt;
mod reply;
mod verify;

#[cfg(feature = "http")]
pub use http::{HttpChatClient, ENV_KEY, ENV_URL};
pub use prompt::{build_layout_prompt, build_realtime_prompt, PromptError, TEMPLATE_VERSION};
pub use reply::{parse_structured_reply, render_reply, ReplyError, ReplyKind, ReplyPayload, StructuredReply};
pub use verify::{ask_verified, collect_layout_via_llm, self_verify, LayoutCollection, Verification, VerifyError, VERIFY_QUESTION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
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
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 0.22,
            top_p: 0.95,
            max_tokens: None,
        }
    }
}

impl SamplingParams {
    pub fn check(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0) {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("top_p must be in (0, 1], got {}", self.top_p));
        }
        Ok(())
    }
}

/// Body of one chat-completion call. Serializes to the wire format
/// `{"model", "messages", "temperature", "top_p"}` (plus `max_tokens` when set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>, params: &SamplingParams) -> Self {
        Self {
            model: model.into(),
            messages,
            temperature: params.temperature,
            top_p: params.top_p,
            max_tokens: params.max_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("client configuration: {0}")]
    Config(String),
    #[error("endpoint returned HTTP {status}")]
    Status { status: u16 },
    #[error("transport: {0}")]
    Io(String),
    #[error("unexpected response: {0}")]
    Protocol(String),
}

/// Anything that can answer a chat-completion request. Implementations
/// must tolerate concurrent calls from several episodes.
pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

impl<T: ChatClient + ?Sized> ChatClient for std::sync::Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        (**self).complete(request)
    }
}

impl<T: ChatClient + ?Sized> ChatClient for &T {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        (**self).complete(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_defaults() {
        let p = SamplingParams::default();
        assert_eq!((p.temperature, p.top_p), (0.22, 0.95));
        assert!(p.check().is_ok());
        assert!(SamplingParams { top_p: 0.0, ..p }.check().is_err());
        assert!(SamplingParams { temperature: -1.0, ..p }.check().is_err());
    }

    #[test]
    fn request_wire_format() {
        let req = ChatRequest::new("gpt-4", vec![ChatMessage::user("hi")], &SamplingParams::default());
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"model":"gpt-4","messages":[{"role":"user","content":"hi"}],"temperature":0.22,"top_p":0.95}"#
        );
    }
}
