//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("linear algebra error: {0}")]
    Linalg(String),

    #[error("matrix is near-singular (condition estimate {condition:.3e})")]
    NearSingular { condition: f64 },

    #[error("Fock space error: {0}")]
    Fock(String),

    #[error("covariance convention violated: {0}")]
    Convention(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("optimization error: {0}")]
    Optimize(String),

    #[error("eigensolver did not converge: residual {residual:.3e}")]
    NoConvergence { residual: f64 },

    #[error("state space too large: {0}")]
    TooLarge(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
