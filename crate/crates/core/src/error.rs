use thiserror::Error;

/// Errors raised by the SIC toolkit.
#[derive(Debug, Error)]
pub enum SicError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value in {term}")]
    NonFinite { term: String },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("divergence detected at iteration {iteration}: {hint}")]
    Divergence { iteration: usize, hint: String },

    #[error("solution not converged: {0}")]
    NotConverged(String),

    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, SicError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(SicError::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
