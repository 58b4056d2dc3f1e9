use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("episode already finished; reset before stepping")]
    EpisodeDone,

    #[error("policy evaluation diverged: closed loop is not stable under the discount")]
    Divergence,

    #[error("noise table of {size} entries cannot hold a {dim}-dimensional slice")]
    NoiseTableTooSmall { size: usize, dim: usize },

    #[error("noise offset {offset} out of range for slice of length {dim} in table of {size}")]
    NoiseIndexOutOfRange { offset: usize, dim: usize, size: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("need at least {required} samples, got {actual}")]
    TooFewSamples { required: usize, actual: usize },

    #[error("worker {worker}: {source}")]
    Worker {
        worker: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt checkpoint payload: {0}")]
    CorruptPayload(String),

    #[error("unknown policy kind `{0}`")]
    UnknownPolicyKind(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, actual })
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
