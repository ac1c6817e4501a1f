use thiserror::Error;

/// Errors raised by the shaping, ambiguity-function and detection routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported constellation: {0}")]
    UnsupportedConstellation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("multiplier residuals overflowed at lambda = ({0}, {1})")]
    Overflow(f64, f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(value: f64, what: &'static str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
