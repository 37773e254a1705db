//! Crate-wide error type.

/// Errors reported by model construction, estimators and solvers.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// A vector or matrix has the wrong dimension.
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// An argument violates a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A requested construction has no solution (e.g. no feasible decay rate).
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// Observer design failed (detectability/observability check).
    #[error("design failed: {0}")]
    Design(String),
    /// The requested mode is not supported.
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            got,
        }
    }
}
