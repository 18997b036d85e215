use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures decoding or encoding the on-disk disparity formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("PFM header is malformed: {0}")]
    PfmHeader(String),
    #[error("PFM payload truncated: expected {expected} bytes, found {found}")]
    PfmTruncated { expected: usize, found: usize },
    #[error("PFM file is a 3-channel color map (magic \"PF\"); only grayscale \"Pf\" is supported")]
    PfmColor,
    #[error("KITTI disparity PNG must be 16-bit single-channel, got {0}")]
    KittiPng(String),
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input is {height}x{width}; height and width must be divisible by the backbone stride {stride}")]
    Stride {
        height: usize,
        width: usize,
        stride: usize,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("benchmark aborted after {} iterations: {reason}", partial.len())]
    BenchAborted { reason: String, partial: Vec<f64> },
    #[error("another benchmark is already running in this process")]
    BenchLockHeld,
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
