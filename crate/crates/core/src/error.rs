use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("singular normal equations; supply λ>0")]
    SingularSystem,

    #[error("insufficient samples for covariance rank: {samples} samples for {features} features")]
    InsufficientSamples { samples: usize, features: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("reservoir diverged (non-finite state) for parameters {0}")]
    Diverged(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("fitness not evaluated for chromosome {0}")]
    UnevaluatedFitness(String),

    #[error("objective failed: {0}")]
    Objective(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
