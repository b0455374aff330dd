use std::path::PathBuf;

/// Errors raised by model construction, data loading, losses and metrics.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("failed to load weights from {path}: {reason}")]
    WeightLoad { path: PathBuf, reason: String },

    #[error("manifest error at entry {index}: {reason}")]
    Manifest { index: usize, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("nifti error on {path}: {reason}")]
    Nifti { path: PathBuf, reason: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
