use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the matching pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("image {width}x{height} is too small: {reason}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        reason: String,
    },

    #[error("unsupported channel count {0} (expected 1 or 3)")]
    UnsupportedChannels(usize),

    #[error("descriptor length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("cannot match {0} descriptors against {1} descriptors")]
    MixedDescriptorKinds(&'static str, &'static str),

    #[error("point maps to infinity under the homography")]
    PointAtInfinity,

    #[error("homography estimation failed: {0}")]
    EstimationFailed(String),

    #[error("homography normalization failed: h33 is zero")]
    NormalizationFailed,

    #[error("RANSAC found no consensus: {0}")]
    NoConsensus(String),

    #[error("inlier count {inliers} exceeds match count {matches}")]
    InlierCount { matches: usize, inliers: usize },

    #[error("failed to read image {path}: {message}")]
    ImageRead { path: PathBuf, message: String },

    #[error("failed to write image {path}: {message}")]
    ImageWrite { path: PathBuf, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("fetch failed for tile (row {row}, col {col}): {message}")]
    Fetch {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
