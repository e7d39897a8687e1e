//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum DtsError {
    /// Invalid configuration: bad schedule parameters, indivisible strides,
    /// malformed mixtures or plans.
    #[error("configuration error: {0}")]
    Config(String),

    /// A denoising step was asked to jump below timestep zero.
    #[error("step overshoot: stride {stride} exceeds current timestep {t}")]
    StepOvershoot { stride: usize, t: usize },

    /// Non-finite values or irrecoverable underflow in numeric kernels.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Two run reports cannot be compared (different schedule, mixture or
    /// dimension).
    #[error("comparison error: {0}")]
    Comparison(String),

    /// Vector dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, DtsError>;
