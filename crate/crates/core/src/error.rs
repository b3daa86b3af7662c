use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {cause}")]
    Io {
        path: PathBuf,
        cause: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate instruction id `{0}`")]
    DuplicateId(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backend unavailable after {attempts} attempts: {message}")]
    BackendUnavailable { attempts: usize, message: String },

    #[error("stub has no entry for instruction `{0}`")]
    StubMiss(String),

    #[error("sandbox failure: {0}")]
    Sandbox(String),

    #[error("input does not parse: {0}")]
    UnparseableInput(String),

    #[error("missing outcome for candidate `{candidate}` on test `{test}`")]
    IncompleteMatrix { candidate: String, test: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("trainer hook failed in round {round}: {message}")]
    HookFailed { round: usize, message: String },

    #[error("aborted: {0}")]
    Aborted(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }
}
