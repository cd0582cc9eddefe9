//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by validation, numerical linear algebra, and model fitting.
#[derive(Debug, Error)]
pub enum GpdError {
    /// Caller-supplied data violates a precondition (shape mismatch,
    /// out-of-range label, non-finite value, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A factorization failed even after jitter escalation, or another
    /// numerical operation could not be completed.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Model fitting failed (every restart diverged, Newton iteration did
    /// not converge, every grid point failed, ...).
    #[error("model error: {0}")]
    Model(String),

    /// File system failure while reading or writing artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed data or configuration file.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, GpdError>;
