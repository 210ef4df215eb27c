use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NonSymmetric(f64),

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:.3e}, largest {largest:.3e})")]
    NotPsd { eigenvalue: f64, largest: f64 },

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("vector has a component of norm {s_component:.3e} in S (relative tolerance {tolerance:.1e})")]
    NotInSPerp { s_component: f64, tolerance: f64 },

    #[error("degenerate operator: S is the whole space, so S-perp is trivial")]
    DegenerateOperator,

    #[error("quadrature did not converge: {0}")]
    QuadratureNotConverged(String),

    #[error("direction lies in S-perp (S-component {0:.3e}); it cannot witness non-smoothing")]
    NotAWitness(f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
