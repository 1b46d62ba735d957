use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("streaming pass {pass} aborted: {source}")]
    Pass {
        pass: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stirling cache holds n <= {max_n}, requested n = {n}")]
    Capacity { n: usize, max_n: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("model format error: {0}")]
    Model(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let row = err.position().map(|p| p.line() as usize).unwrap_or_default();
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
                row,
                msg: format!("expected {expected_len} fields, found {len}"),
            },
            other => Error::Parse {
                row,
                msg: format!("{other:?}"),
            },
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Model(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
