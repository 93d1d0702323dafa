use std::path::PathBuf;

use thiserror::Error;

use crate::prm::DensityClass;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid dataset profile: {0}")]
    InvalidProfile(String),

    #[error("insufficient data: no {class} patch found after {attempts} sampling attempts")]
    InsufficientData {
        class: DensityClass,
        attempts: usize,
    },

    #[error("shape error at layer `{layer}`: {detail}")]
    Shape { layer: String, detail: String },

    #[error("patch must be 224x224, got {height}x{width}")]
    PatchSize { height: usize, width: usize },

    #[error("predictor error: {0}")]
    Predictor(String),

    #[error("patch {index}: {source}")]
    AtPatch {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: checksum mismatch (expected {expected}, found {found})")]
    ChecksumMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("malformed data: {0}")]
    Format(String),

    #[error("archive truncated: {0}")]
    Truncated(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("image decode: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_patch(index: usize, source: Error) -> Self {
        Error::AtPatch {
            index,
            source: Box::new(source),
        }
    }
}
