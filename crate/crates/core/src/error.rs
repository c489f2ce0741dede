use std::path::PathBuf;

use crate::trainer::TrainLog;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("requested {requested} principal components but the input only has rank {achieved}")]
    Rank { requested: usize, achieved: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}: {reason}")]
    Divergence {
        step: u64,
        reason: String,
        log: Box<TrainLog>,
    },

    #[error("group {group}: {rate} is undefined (empty denominator)")]
    EmptyDenominator { group: usize, rate: &'static str },

    #[error("no examples in cell {0}")]
    EmptyCell(String),

    #[error("word not in vocabulary: {0}")]
    MissingWord(String),

    #[error("codec has not been fitted")]
    UnfittedCodec,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

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

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
