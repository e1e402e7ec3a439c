//! Provider-agnostic chat completion.
//!
//! Every pipeline step talks to a [`ChatProvider`]. Two implementations ship:
//! [`ScriptedProvider`] answers from a rule file and makes every path testable
//! offline; [`HttpProvider`] speaks the common `/v1/chat/completions` shape with
//! retry and a wall-clock deadline.

mod http;
mod scripted;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpProvider, RetryPolicy};
pub use scripted::{load_script, parse_script, ScriptError, ScriptRule, ScriptedProvider};

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
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Default sampling temperature for every pipeline call.
pub const DEFAULT_TEMPERATURE: f32 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f32,
    pub max_tokens: u32,
    /// Identifies the pipeline step (`step1.intention`, `step2.creator`, ...).
    pub request_tag: String,
}

impl ChatRequest {
    pub fn new(request_tag: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        ChatRequest {
            model: String::new(),
            messages,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            request_tag: request_tag.into(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |msg: &str| Err(GatewayError::InvalidRequest(msg.to_string()));
        match self.messages.first() {
            None => return bad("messages must not be empty"),
            Some(m) if m.role == Role::Assistant => return bad("first message must be system or user"),
            _ => {}
        }
        if self.messages.iter().any(|m| m.content.is_empty()) {
            return bad("message content must not be empty");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must be within [0, 2]");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        Ok(())
    }

    /// All message contents joined; what substring rules match against.
    pub fn full_text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    pub provider_meta: BTreeMap<String, String>,
}

impl ChatResponse {
    pub fn stop(content: impl Into<String>) -> Self {
        ChatResponse {
            content: content.into(),
            finish_reason: FinishReason::Stop,
            provider_meta: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("deadline exceeded after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("provider error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Provider {
        message: String,
        status: Option<u16>,
        retryable: bool,
    },
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    pub fn provider(message: impl Into<String>) -> Self {
        GatewayError::Provider {
            message: message.into(),
            status: None,
            retryable: false,
        }
    }
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for &P {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(req)
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<P> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(req)
    }
}

/// Per-step model selection. Keys are request-tag prefixes; the longest matching
/// prefix wins, so `step2.creator` can differ from the rest of `step2`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRouting {
    #[serde(default)]
    pub default_model: String,
    #[serde(default)]
    pub overrides: BTreeMap<String, String>,
}

impl ModelRouting {
    pub fn model_for(&self, request_tag: &str) -> &str {
        self.overrides
            .iter()
            .filter(|(prefix, _)| {
                request_tag == prefix.as_str()
                    || request_tag.strip_prefix(prefix.as_str()).is_some_and(|rest| rest.starts_with('.'))
            })
            .max_by_key(|(prefix, _)| prefix.len())
            .map(|(_, model)| model.as_str())
            .unwrap_or(&self.default_model)
    }
}

/// Wraps a provider and fills in `model` from a [`ModelRouting`] when the request
/// leaves it empty.
pub struct Routed<P> {
    inner: P,
    routing: ModelRouting,
}

impl<P: ChatProvider> Routed<P> {
    pub fn new(inner: P, routing: ModelRouting) -> Self {
        Routed { inner, routing }
    }
}

impl<P: ChatProvider> ChatProvider for Routed<P> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        if !req.model.is_empty() {
            return self.inner.complete(req);
        }
        let mut routed = req.clone();
        routed.model = self.routing.model_for(&req.request_tag).to_string();
        self.inner.complete(&routed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_validation() {
        let ok = ChatRequest::new("t", vec![ChatMessage::user("hi")]);
        assert!(ok.validate().is_ok());
        assert!(ChatRequest::new("t", vec![]).validate().is_err());
        assert!(ChatRequest::new("t", vec![ChatMessage::assistant("x")]).validate().is_err());
        assert!(ChatRequest::new("t", vec![ChatMessage::user("")]).validate().is_err());
        let mut hot = ok.clone();
        hot.temperature = 2.5;
        assert!(hot.validate().is_err());
    }

    #[test]
    fn routing_longest_prefix() {
        let routing = ModelRouting {
            default_model: "base".into(),
            overrides: [("step2".to_string(), "interviewer-model".to_string()), ("step2.creator".to_string(), "creator-model".to_string())]
                .into_iter()
                .collect(),
        };
        assert_eq!(routing.model_for("step1.intention"), "base");
        assert_eq!(routing.model_for("step2.interviewer"), "interviewer-model");
        assert_eq!(routing.model_for("step2.creator"), "creator-model");
        assert_eq!(routing.model_for("step2x"), "base");
    }
}
