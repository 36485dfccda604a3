use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// The variants group into the classes the CLI maps to exit codes:
/// configuration (2), data (3) and numeric (4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {op} got {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("index {index} out of range for size {size}")]
    Index { index: usize, size: usize },

    #[error("token index {token} out of range for vocabulary of {vocab_size}")]
    Vocab { token: usize, vocab_size: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("loss function is not deterministic: {first} then {second}")]
    Determinism { first: f64, second: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("checkpoint header error: {0}")]
    CheckpointHeader(String),

    #[error("unsupported checkpoint version `{0}`")]
    CheckpointVersion(String),

    #[error("checkpoint payload length error: {0}")]
    CheckpointPayload(String),

    #[error("checkpoint tensor `{name}` declared {declared:?} but payload holds {found:?}")]
    CheckpointDimension {
        name: String,
        declared: (usize, usize),
        found: (usize, usize),
    },

    #[error("i/o error on {path}: {source}")]
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

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) => 2,
            Error::Data(_)
            | Error::Io { .. }
            | Error::Vocab { .. }
            | Error::Index { .. }
            | Error::CheckpointHeader(_)
            | Error::CheckpointVersion(_)
            | Error::CheckpointPayload(_)
            | Error::CheckpointDimension { .. } => 3,
            Error::Numeric(_) | Error::Determinism { .. } | Error::Dimension { .. } => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
