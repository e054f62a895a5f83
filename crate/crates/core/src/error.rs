use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("corrupt stream: {0}")]
    CorruptStream(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint hash mismatch: stream was produced by model {stream:016x}, checkpoint is {checkpoint:016x}")]
    ModelMismatch { stream: u64, checkpoint: u64 },

    #[error("training diverged at step {step}: {term} is not finite")]
    Divergence { step: usize, term: String },

    #[error("empty batch passed to {0}")]
    EmptyBatch(&'static str),

    #[error("division by zero: {0}")]
    Division(&'static str),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
