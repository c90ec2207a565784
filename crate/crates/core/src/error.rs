use thiserror::Error;

/// Failures raised by the factorization and solver layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BqpError {
    /// A Cholesky pivot fell at or below the tolerance. `pivot` is the position in the working
    /// order where the failure happened.
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The homotopy tracker exceeded its step budget, which usually means it is cycling.
    #[error("path tracking exceeded {steps} steps")]
    StepCap { steps: usize },

    #[error("outer loop stopped after {iters} iterations without meeting the step tolerance")]
    MaxOuterReached { iters: usize },
}

pub type Result<T> = std::result::Result<T, BqpError>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(BqpError::DimensionMismatch { expected, got })
    }
}
