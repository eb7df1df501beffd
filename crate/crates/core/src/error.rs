use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error in {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("unsupported audio encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("malformed {what}: {source}")]
    Json {
        what: &'static str,
        #[source]
        source: serde_json::Error,
    },

    /// Input that violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A fractional lag outside the stored correlation window.
    #[error("lag {lag} outside [-{max_lag}, {max_lag}]")]
    LagOutOfRange { lag: f64, max_lag: usize },

    /// The computation ran but produced nothing meaningful (all weights
    /// zero, silent recording, ...).
    #[error("degenerate result: {0}")]
    Degenerate(String),

    #[error("malformed cache file: {0}")]
    Cache(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
