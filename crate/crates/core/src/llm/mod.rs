//! Prompt rendering, completion providers and SQL extraction.

mod extract;
mod prompt;
mod provider;
mod remote;

pub use extract::{extract_sql, extract_tip};
pub use prompt::{prompt_digest, render, PromptContext, PromptKind};
pub use provider::{
    complete, CallRecord, Completion, CompletionParams, CompletionProvider, CompletionRequest,
    Script, ScriptedProvider,
};
pub use remote::{ChatConfig, ChatProvider};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("{kind:?} prompt is missing required field `{field}`")]
    MissingField { kind: PromptKind, field: &'static str },
    #[error("no SQL found in model output")]
    NoSqlFound,
    #[error("script has no entry for {key}")]
    ScriptExhausted { key: String },
    #[error("provider returned an empty completion")]
    EmptyCompletion,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("invalid provider configuration: {0}")]
    Config(String),
}

impl LlmError {
    /// Transport failures, 429 and 5xx are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::Transport(_) => true,
            LlmError::Status { status, .. } => *status == 429 || (500..600).contains(status),
            _ => false,
        }
    }
}
