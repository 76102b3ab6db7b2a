//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value (unknown family, bad hyperparameter, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid runtime input (shape mismatch, context overflow, empty batch, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Reflector output did not contain the required tag structure.
    /// Carries the raw text so the caller can apply its fallback policy.
    #[error("reflection parse failure: {reason}")]
    ReflectionParse { reason: String, raw: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
