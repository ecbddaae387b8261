use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error("could not place cells: requested {requested}, placed {achieved}")]
    Placement { requested: usize, achieved: usize },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    /// Process exit code and short name for command-line reporting.
    /// Code 2 is left to argument parsing.
    pub fn exit_code(&self) -> (i32, &'static str) {
        match self {
            Error::Config(_) => (3, "config"),
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => (4, "missing-input"),
            Error::Io { .. } => (5, "io"),
            Error::Image { .. } | Error::Parse { .. } => (6, "bad-input"),
            Error::Checkpoint(CheckpointError::ArchMismatch(_)) => (7, "arch-mismatch"),
            Error::Checkpoint(_) => (8, "checkpoint"),
            Error::Shape(_) | Error::InvalidArgument(_) => (9, "invalid-argument"),
            Error::InsufficientData(_) | Error::Placement { .. } => (10, "insufficient-data"),
            Error::NonFinite { .. } => (11, "non-finite"),
        }
    }
}

/// Reasons a checkpoint file is refused. A refused load never yields a partial store.
#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("checkpoint: bad magic tag")]
    BadMagic,

    #[error("checkpoint: format version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint: header checksum mismatch")]
    HeaderChecksum,

    #[error("checkpoint: payload checksum mismatch")]
    PayloadChecksum,

    #[error("checkpoint: truncated payload (expected {expected} bytes, found {found})")]
    Truncated { expected: usize, found: usize },

    #[error("checkpoint: malformed header: {0}")]
    Header(String),

    #[error("checkpoint: index/shape inconsistency: {0}")]
    Index(String),

    #[error("checkpoint: architecture mismatch: {0}")]
    ArchMismatch(String),
}
