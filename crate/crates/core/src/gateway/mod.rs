//! Chat-completion gateway.
//!
//! Every model call in the pipeline goes through [`ChatGateway`]. Three
//! backends ship: a live OpenAI-compatible HTTP client, a strict replay
//! backend reading recorded fixtures, and a recorder that wraps any other
//! backend and writes fixtures as it goes.

mod fixtures;
mod http;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use fixtures::{FixtureRecord, FixtureStore, RecordingGateway, ReplayGateway};
pub use http::{network_calls, HttpGateway, LlmEndpointConfig};

/// Which of the model's roles a request is for. All roles may share one
/// served model; routing is configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmRole {
    Agent,
    Summarizer,
    Corrector,
    Judge,
}

impl LlmRole {
    pub const ALL: [LlmRole; 4] = [LlmRole::Agent, LlmRole::Summarizer, LlmRole::Corrector, LlmRole::Judge];

    pub fn as_str(self) -> &'static str {
        match self {
            LlmRole::Agent => "agent",
            LlmRole::Summarizer => "summarizer",
            LlmRole::Corrector => "corrector",
            LlmRole::Judge => "judge",
        }
    }
}

impl fmt::Display for LlmRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Decoding regime. Defaults are greedy decoding, seed 100 and a
/// 3,000-token completion cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    pub temperature: f64,
    pub seed: u64,
    pub max_completion_tokens: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams { temperature: 0.0, seed: 100, max_completion_tokens: 3000 }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.max_completion_tokens == 0 {
            return Err("max_completion_tokens must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

impl ChatRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ChatRole::System => "system",
            ChatRole::User => "user",
            ChatRole::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role_target: LlmRole,
    pub messages: Vec<ChatMessage>,
    pub decode: DecodeParams,
}

impl ChatRequest {
    pub fn new(role_target: LlmRole, messages: Vec<ChatMessage>, decode: DecodeParams) -> Self {
        ChatRequest { role_target, messages, decode }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest { role: self.role_target, reason: "no messages".into() });
        }
        self.decode
            .validate()
            .map_err(|reason| GatewayError::InvalidRequest { role: self.role_target, reason })
    }

    /// Concatenated message contents, for cheap containment checks.
    pub fn joined_content(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub content: String,
    pub finish_reason: String,
    #[serde(default)]
    pub usage: Usage,
}

impl Completion {
    pub fn stop(content: impl Into<String>) -> Self {
        Completion { content: content.into(), finish_reason: "stop".into(), usage: Usage::default() }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{role}: request timed out after {attempts} attempt(s)")]
    Timeout { role: LlmRole, attempts: u32 },
    #[error("{role}: could not reach endpoint after {attempts} attempt(s): {message}")]
    Connect { role: LlmRole, attempts: u32, message: String },
    #[error("{role}: endpoint returned HTTP {status} after {attempts} attempt(s): {body}")]
    Status { role: LlmRole, status: u16, attempts: u32, body: String },
    #[error("{role}: malformed response body after {attempts} attempt(s): {message}")]
    MalformedBody { role: LlmRole, attempts: u32, message: String },
    #[error("{role}: no endpoint configured")]
    NoEndpoint { role: LlmRole },
    #[error("{role}: invalid request: {reason}")]
    InvalidRequest { role: LlmRole, reason: String },
    #[error("MissingFixture: no replay fixture {key} for {role} request")]
    MissingFixture { role: LlmRole, key: String },
    #[error("fixture {key} already recorded; pass --force to overwrite")]
    Conflict { key: String },
    #[error("fixture store: {0}")]
    Store(String),
    #[error("{role}: backend error: {message}")]
    Backend { role: LlmRole, message: String },
}

impl GatewayError {
    /// Only transport failures are retried, never anything about content.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Timeout { .. } | GatewayError::Connect { .. } => true,
            GatewayError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Something that answers chat requests. Implementations must be safe to
/// call from several episode threads at once.
pub trait ChatGateway: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<Completion, GatewayError>;
}

impl<G: ChatGateway + ?Sized> ChatGateway for &G {
    fn chat(&self, req: &ChatRequest) -> Result<Completion, GatewayError> {
        (**self).chat(req)
    }
}

impl<G: ChatGateway + ?Sized> ChatGateway for Arc<G> {
    fn chat(&self, req: &ChatRequest) -> Result<Completion, GatewayError> {
        (**self).chat(req)
    }
}

impl<G: ChatGateway + ?Sized> ChatGateway for Box<G> {
    fn chat(&self, req: &ChatRequest) -> Result<Completion, GatewayError> {
        (**self).chat(req)
    }
}

/// Gateway backed by a closure. Handy for tests and embedding.
pub struct FnGateway<F>(pub F);

impl<F> ChatGateway for FnGateway<F>
where
    F: Fn(&ChatRequest) -> Result<Completion, GatewayError> + Send + Sync,
{
    fn chat(&self, req: &ChatRequest) -> Result<Completion, GatewayError> {
        (self.0)(req)
    }
}

/// Stable content hash of a request: role, ordered (role, content) pairs and
/// decode parameters, hashed with SHA-256 over a compact JSON encoding.
pub fn fixture_key(req: &ChatRequest) -> String {
    let messages: Vec<(&str, &str)> = req.messages.iter().map(|m| (m.role.as_str(), m.content.as_str())).collect();
    let canonical = serde_json::to_string(&(
        req.role_target.as_str(),
        messages,
        (req.decode.temperature, req.decode.seed, req.decode.max_completion_tokens),
    ))
    .expect("request encodes as JSON");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ChatRequest {
        ChatRequest::new(
            LlmRole::Agent,
            vec![ChatMessage::system("You are an agent."), ChatMessage::user("Task: send the report")],
            DecodeParams::default(),
        )
    }

    #[test]
    fn key_is_stable() {
        assert_eq!(fixture_key(&sample()), fixture_key(&sample()));
    }

    #[test]
    fn one_character_changes_key() {
        let mut other = sample();
        other.messages[1].content.push('!');
        assert_ne!(fixture_key(&sample()), fixture_key(&other));
        let mut role = sample();
        role.role_target = LlmRole::Corrector;
        assert_ne!(fixture_key(&sample()), fixture_key(&role));
    }

    #[test]
    fn documented_sample_key() {
        // sha256 of ["agent",[["system","You are an agent."],["user","Task: send the report"]],[0.0,100,3000]]
        // computed independently with Python's hashlib + json.dumps(separators=(",", ":")).
        assert_eq!(fixture_key(&sample()), SAMPLE_KEY);
    }

    const SAMPLE_KEY: &str = "04d9ab969bae8e41eaca3ae4cd4f2cb5fad52b3f44cb61e3790dc5df9d2cf382";

    #[test]
    fn decode_defaults() {
        let d = DecodeParams::default();
        assert_eq!((d.temperature, d.seed, d.max_completion_tokens), (0.0, 100, 3000));
        assert!(DecodeParams { temperature: -0.1, ..d }.validate().is_err());
        assert!(DecodeParams { max_completion_tokens: 0, ..d }.validate().is_err());
    }

    #[test]
    fn empty_request_rejected() {
        let req = ChatRequest::new(LlmRole::Judge, vec![], DecodeParams::default());
        assert!(matches!(req.validate(), Err(GatewayError::InvalidRequest { .. })));
    }

    #[test]
    fn transient_classification() {
        let role = LlmRole::Agent;
        assert!(GatewayError::Timeout { role, attempts: 1 }.is_transient());
        assert!(GatewayError::Status { role, status: 503, attempts: 1, body: String::new() }.is_transient());
        assert!(!GatewayError::Status { role, status: 400, attempts: 1, body: String::new() }.is_transient());
        assert!(!GatewayError::MalformedBody { role, attempts: 1, message: String::new() }.is_transient());
    }
}
