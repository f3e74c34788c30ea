use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("inconsistent dimensions: {0}")]
    InconsistentDims(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mask is empty")]
    EmptyMask,

    #[error("empty list: {0}")]
    EmptyList(String),

    #[error("mask vanishes at feature resolution (weight sum {0:e})")]
    DegenerateMask(f64),

    #[error("channel mismatch: expected {expected}, found {found}")]
    ChannelMismatch { expected: usize, found: usize },

    #[error("slice index {index} out of range for depth {depth}")]
    SliceOutOfRange { index: usize, depth: usize },

    #[error("grid too small: every axis needs at least 2 voxels, got {0:?}")]
    GridTooSmall(Vec<usize>),

    #[error("pairing has no pairs")]
    EmptyPairing,

    #[error("loss became non-finite at iteration {iteration} (NonFiniteLoss); reduce the step size")]
    NonFiniteLoss { iteration: usize },

    #[error("point {0:?} lies outside the grid")]
    PointOutOfRange(Vec<f64>),

    #[error("displaced point {0:?} lies outside the grid")]
    DisplacedPointOutOfRange(Vec<f64>),

    #[error("could not place shape {shape} after {attempts} attempts")]
    ShapePlacementFailure { shape: usize, attempts: usize },

    #[error("shape parameters fall outside the grid: {0}")]
    OutOfBounds(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot parse {}: {message}", path.display())]
    ManifestParse { path: PathBuf, message: String },

    #[error("{}: expected {expected} bytes, found {found}", path.display())]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
