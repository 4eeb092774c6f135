//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("covariance is not positive-definite (Cholesky failed)")]
    NotPositiveDefinite,

    #[error("timestep {t} out of range 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("unknown class id {class}: model has {count} classes")]
    UnknownClass { class: usize, count: usize },

    #[error("guidance mode {mode} requires a guide denoiser")]
    MissingGuide { mode: &'static str },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite loss {loss} at training step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("non-finite state in chain {chain} at step {step}")]
    NonFiniteState { chain: usize, step: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("architecture mismatch: {field} expected {expected}, got {actual}")]
    ArchitectureMismatch {
        field: &'static str,
        expected: String,
        actual: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        CoreError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
