use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error classes, used by the command line for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("point lies outside the fisheye field of view (theta = {theta:.4} rad, limit = {limit:.4} rad)")]
    PointOutsideFov { theta: f64, limit: f64 },

    #[error("sequence length {length} is shorter than the required {required} frames")]
    LengthTooShort { length: usize, required: usize },

    #[error("no transient frame found above threshold {threshold}")]
    NoTransientFound { threshold: f64 },

    #[error("aligned recordings do not overlap (offset {offset}, lengths {len_a} and {len_b})")]
    NoOverlap {
        offset: i64,
        len_a: usize,
        len_b: usize,
    },

    #[error("mask missing: {0}")]
    MaskMissing(String),

    #[error("split `{split}` has {length} frames, fewer than the window size {window}")]
    SplitTooShort {
        split: String,
        length: usize,
        window: usize,
    },

    #[error("crop box {crop:?} is outside the {width}x{height} frame")]
    CropOutOfBounds {
        crop: (u32, u32, u32, u32),
        width: u32,
        height: u32,
    },

    #[error("frame index {index} out of range (length {length})")]
    IndexOutOfRange { index: usize, length: usize },

    #[error("pose set is empty")]
    EmptyPoseSet,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("dataset too small: {0}")]
    DatasetTooSmall(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("unknown mode `{0}`")]
    UnknownMode(String),

    #[error("sequence of {length} frames is shorter than the window size {window}")]
    SequenceTooShort { length: usize, window: usize },

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Self::Image {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::UnknownMode(_) | Error::InvalidConfig(_) | Error::Toml(_) => {
                ErrorCategory::Usage
            }
            Error::NonFiniteLoss { .. } | Error::Io { .. } => ErrorCategory::Runtime,
            _ => ErrorCategory::Data,
        }
    }
}
