use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the engagement-modelling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("shape mismatch: {left:?} vs {right:?} ({context})")]
    Shape {
        left: Vec<usize>,
        right: Vec<usize>,
        context: String,
    },

    #[error("index {index} out of range for {what} of size {size}")]
    IndexOutOfRange { what: String, index: usize, size: usize },

    #[error("{path}: line {line}: {reason}")]
    MalformedRow { path: PathBuf, line: u64, reason: String },

    #[error("non-monotone timestamps for user `{user_id}` in game `{game_id}`")]
    NonMonotone { user_id: String, game_id: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("all hyperband trials diverged (trial seeds: {seeds:?})")]
    AllTrialsDiverged { seeds: Vec<u64> },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn shape(left: &[usize], right: &[usize], context: impl Into<String>) -> Self {
        Error::Shape {
            left: left.to_vec(),
            right: right.to_vec(),
            context: context.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
