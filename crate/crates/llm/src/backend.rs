//! The transport abstraction shared by HTTP and mock backends.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::payload::ChatPayload;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: u64,
    pub output: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.input + self.output
    }
}

impl std::ops::Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage { input: self.input + rhs.input, output: self.output + rhs.output }
    }
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> TokenUsage {
        iter.fold(TokenUsage::default(), |a, b| a + b)
    }
}

/// A payload plus routing metadata that mock backends may key on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub payload: ChatPayload,
    /// Name of the template the prompt was rendered from.
    pub template: String,
    /// Index of the completion within a self-consistency batch.
    pub sample_index: u32,
    /// Re-ask attempt, 0 for the first request.
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    /// Network failure, timeout, rate limit or server error.
    #[error("transport: {0}")]
    Transport(String),
    #[error("authentication: {0}")]
    Auth(String),
    /// A non-retryable protocol failure, e.g. an unexpected response shape.
    #[error("protocol: {0}")]
    Protocol(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

pub trait ChatBackend: Send + Sync {
    /// Stable identifier; part of verifier cache keys.
    fn id(&self) -> &str;

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

pub type SharedBackend = Arc<dyn ChatBackend>;

/// Crude whitespace token estimate used by mock backends.
pub fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
