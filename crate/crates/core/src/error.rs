use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("cannot aggregate an empty set of vectors")]
    EmptyAggregate,

    #[error("invalid weights: {0}")]
    Weight(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("cannot evaluate on an empty sample set")]
    EmptyEvaluation,

    #[error("partition error: {0}")]
    Partition(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("truncated data in {path}: {msg}")]
    Length { path: PathBuf, msg: String },

    #[error("inconsistent data: {0}")]
    Consistency(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint does not match this experiment: {0}")]
    Mismatch(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("client {client}: {source}")]
    Client {
        client: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_round(self, round: usize) -> Self {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_client(self, client: usize) -> Self {
        Error::Client {
            client,
            source: Box::new(self),
        }
    }

    /// Innermost error with round/client context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Round { source, .. } | Error::Client { source, .. } => source.root(),
            other => other,
        }
    }
}
