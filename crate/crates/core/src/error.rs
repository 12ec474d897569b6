use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the harmonization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("not found: {0}")]
    NotFound(PathBuf),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt data in {path}: {reason}")]
    CorruptData { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty region: {0}")]
    EmptyRegion(&'static str),

    #[error("empty histogram")]
    EmptyHistogram,

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("missing labels: {0}")]
    MissingLabels(String),

    #[error("stale or missing forward cache: {0}")]
    StaleCache(&'static str),

    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint checksum mismatch")]
    Checksum,

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("comparison graph is disconnected")]
    DisconnectedGraph,

    #[error("method {0} has no recorded comparisons")]
    IsolatedMethod(String),

    #[error("invalid pairwise data: {0}")]
    Pairwise(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }
}
