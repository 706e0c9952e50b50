use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("linearization produced non-finite entries at state {state:?}")]
    LinearizationFailure { state: Vec<f64> },

    #[error("rollout diverged at step {step}")]
    Divergence { step: usize },

    #[error("Q_uu + mu*I is not positive definite at step {step} (mu = {mu:e})")]
    NotPositiveDefinite { step: usize, mu: f64 },

    #[error("regularization exceeded its upper bound ({mu:e})")]
    RegularizationOverflow { mu: f64 },

    #[error("gain predictor failed: {0}")]
    Predictor(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
