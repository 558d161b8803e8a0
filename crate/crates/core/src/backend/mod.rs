//! Model/tool boundary.
//!
//! Everything the runtime asks of a model goes through [`Backend::invoke`].
//! Two implementations ship: a transcript replayer for deterministic tests
//! and a generic JSON-over-HTTPS client.

#[cfg(feature = "http")]
mod http;
mod transcript;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::contract::Level;
use crate::phase::Phase;

#[cfg(feature = "http")]
pub use http::{HttpBackend, API_TOKEN_ENV, API_URL_ENV};
pub use transcript::{load_transcript, MatchSpec, Transcript, TranscriptBackend, TranscriptEntry, TranscriptError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub phase: Phase,
    pub instructions: String,
    pub context: String,
    pub previous_response_id: Option<String>,
    pub reasoning_effort: Level,
    pub verbosity: Level,
    pub temperature: f64,
    pub seed: Option<i64>,
    pub tool_allowance: u32,
    pub max_output_tokens: Option<u32>,
    pub use_web: bool,
}

impl ModelRequest {
    /// Hex SHA-256 of the instruction text; transcripts may match on a prefix.
    pub fn instruction_hash(&self) -> String {
        instruction_hash(&self.instructions)
    }
}

pub fn instruction_hash(instructions: &str) -> String {
    format!("{:x}", Sha256::digest(instructions.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub name: String,
    #[serde(default)]
    pub arguments: Value,
    /// Optional calls are the ones dropped by `skip_non_critical_tools`.
    #[serde(default)]
    pub optional: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub response_id: String,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured: Option<Value>,
    pub response_tokens: u64,
    pub response_cost: f64,
    pub response_time_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty_mus: Option<f64>,
    #[serde(default)]
    pub tool_calls: Vec<ToolInvocation>,
}

impl ModelResponse {
    /// Field of the structured payload, if any.
    pub fn field(&self, key: &str) -> Option<&Value> {
        self.structured.as_ref()?.get(key)
    }

    pub fn confidence(&self) -> Option<f64> {
        self.field("confidence")?.as_f64()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transcript underrun at phase {0}")]
    Underrun(Phase),
    #[error("transcript mismatch at phase {phase}: {detail}")]
    Mismatch { phase: Phase, detail: String },
    #[error("scripted failure at phase {phase}: {message}")]
    Scripted { phase: Phase, message: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

pub trait Backend: Send + Sync {
    fn invoke(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn invoke(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        (**self).invoke(request)
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn invoke(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        (**self).invoke(request)
    }
}

/// Rough token count: `ceil(chars / 4)`.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_estimate() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens(&"a".repeat(400)), 100);
        assert_eq!(estimate_tokens("abc"), 1);
        assert_eq!(estimate_tokens("ééééé"), 2);
    }
}
