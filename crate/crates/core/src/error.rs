//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid SDF sample: {0}")]
    InvalidSdfSample(String),

    #[error("degenerate median: unsigned-distance median must be positive, got {0}")]
    DegenerateMedian(f64),

    #[error("empty cloud")]
    EmptyCloud,

    #[error("quaternion is not unit length (|q| = {0})")]
    NonUnitQuaternion(f64),

    #[error("normal is not unit length (|n| = {0})")]
    NonUnitNormal(f64),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("forward pass not retained: rasterize the view with contributor lists enabled")]
    ForwardNotRetained,

    #[error("environment not prefiltered: call EnvironmentLight::prefilter first")]
    NotPrefiltered,

    #[error("image dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("empty mask: no valid pixels")]
    EmptyMask,

    #[error("non-finite loss term `{term}` at iteration {iteration}")]
    NonFiniteLoss { term: String, iteration: u64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dataset error in {path}: {message}")]
    Dataset { path: PathBuf, message: String },

    #[error("unsupported format for {path}: {message}")]
    UnsupportedFormat { path: PathBuf, message: String },

    #[error("checkpoint version mismatch: file has version {found}, this build reads version {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}
