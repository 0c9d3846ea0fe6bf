//! Error type shared across the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("invalid activation: {0}")]
    InvalidActivation(String),

    #[error("class index {class} out of range for {num_classes} classes")]
    InvalidClass { class: usize, num_classes: usize },

    #[error("layer {layer} cannot take a cap: {reason}")]
    InvalidCapTarget { layer: usize, reason: String },

    #[error("invalid attack config: {0}")]
    InvalidAttackConfig(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("label {value} outside the 0..=9 range")]
    LabelRange { value: u8 },

    #[error("{path}: bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    IdxMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("image count {images} does not match label count {labels}")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("{path}: IDX payload is {found} bytes, expected {expected}")]
    IdxPayloadSize {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("checkpoint has unsupported version {found} (supported: {supported})")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("checkpoint is corrupt: {0}")]
    CheckpointCorrupt(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wraps an IO error with the path it occurred on.
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
