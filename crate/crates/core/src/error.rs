//! Error type shared across the crate.

use thiserror::Error;

use crate::rootfind::RootError;

/// Everything that can go wrong while solving, evaluating or verifying.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A market parameter failed validation.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    /// An argument fell outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A regime-specific constructor was called with parameters belonging to another regime.
    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),

    #[error("root finding failed: {0}")]
    Root(#[from] RootError),

    /// The finite-difference iteration hit its sweep cap.
    #[error("no convergence after {sweeps} sweeps (last change {residual:e})")]
    NonConvergence { sweeps: usize, residual: f64 },

    /// Invalid simulation or grid settings.
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
