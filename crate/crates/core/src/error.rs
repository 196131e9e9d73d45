use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("slice index {index} out of range for a volume with {len} slices")]
    SliceOutOfBounds { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid orientation: {0}")]
    Orientation(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("grid mismatch: expected {expected:?}, found {found:?}")]
    GridMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("DICOM metadata error in {path}: {message}")]
    Metadata { path: PathBuf, message: String },

    #[error("inconsistent series: {0}")]
    InconsistentSeries(String),

    #[error("missing slice: gap of {gap:.4} mm between positions {before:.4} and {after:.4} (median spacing {median:.4} mm)")]
    MissingSlice {
        gap: f64,
        median: f64,
        before: f64,
        after: f64,
    },

    #[error("corrupt bundle {path}: {message}")]
    CorruptBundle { path: PathBuf, message: String },

    #[error("registration failed: {0}")]
    Registration(String),

    #[error("region is empty")]
    EmptyRegion,

    #[error("mask consistency: {0}")]
    MaskConsistency(String),

    #[error("degenerate region: area {area} px is below the minimum of {minimum} px")]
    DegenerateRegion { area: usize, minimum: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("augmentation: {0}")]
    Augmentation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image encoding error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
