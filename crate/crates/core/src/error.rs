use std::io;
use std::path::{Path, PathBuf};

use crate::registry::ClassCode;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("invalid class registry: {0}")]
    InvalidRegistry(String),
    #[error("unknown class: {0}")]
    UnknownClass(String),
    #[error("class code {0} is not in the registry")]
    UnknownCode(ClassCode),
    #[error("registry mismatch: expected {expected}, found {found}")]
    RegistryMismatch { expected: String, found: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("directory {directory:?} in source {source_id:?} has no label mapping and is not ignored")]
    UnmappedDirectory { source_id: String, directory: String },
    #[error("no readable images found under {0}")]
    NoImages(PathBuf),
    #[error("classes without usable samples: {}", .0.join(", "))]
    EmptyClasses(Vec<String>),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("model {id:?} is unavailable: {instructions}")]
    ModelUnavailable { id: String, instructions: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}
