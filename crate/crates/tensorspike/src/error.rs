use thiserror::Error;

/// Errors raised by the library.
///
/// Variants split into two families: validation errors (bad inputs, caught
/// before any sample is drawn) and runtime aborts (numerical failure or an
/// exhausted oracle). See [`Error::is_validation`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parity error: {0}")]
    Parity(String),

    #[error("explicit noise tensor has {entries} entries, above the cap of {cap}")]
    ExplicitTooLarge { entries: usize, cap: usize },

    #[error("sample index {index} for block {block} is not fresh (last used {last})")]
    Freshness { block: usize, index: u64, last: u64 },

    #[error("sample cap of {cap} exceeded")]
    SampleCap { cap: u64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("zero vector or matrix where a nonzero one is required: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad inputs rather than a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid(_)
                | Error::Dimension(_)
                | Error::Parity(_)
                | Error::ExplicitTooLarge { .. }
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

pub(crate) fn ensure_finite(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
