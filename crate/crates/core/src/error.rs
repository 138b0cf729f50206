use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Failures reported by a [`Scorer`](crate::victim::Scorer).
#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scorer at {endpoint} unreachable")]
    Transport {
        endpoint: String,
        #[source]
        source: io::Error,
    },
    #[error("scorer returned an error: {0}")]
    Remote(String),
    #[error("scorer protocol violation: {0}")]
    Protocol(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
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

pub type Result<T, E = Error> = std::result::Result<T, E>;
