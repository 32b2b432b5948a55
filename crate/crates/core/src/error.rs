use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("malformed {what}: {message}")]
    Malformed { what: &'static str, message: String },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("infeasible batch: {0}")]
    InfeasibleBatch(String),

    #[error("infeasible placement on node {node}: {reason}")]
    InfeasibleNode { node: usize, reason: String },

    #[error("sequence of length {len} is too short for a ring of size {ring_size}")]
    SequenceTooShort { len: u64, ring_size: usize },

    #[error("plan validation failed: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(key: &str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig { key: key.to_string(), reason: reason.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by a batch that cannot be placed on the cluster.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::InfeasibleBatch(_) | Error::InfeasibleNode { .. })
    }
}
