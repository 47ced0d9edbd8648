use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt store: expected {expected} bytes of {what}, found {actual}")]
    Corruption {
        what: &'static str,
        expected: u64,
        actual: u64,
    },

    #[error("dimension mismatch at row {row}: {detail}")]
    DimensionMismatch { row: usize, detail: String },

    #[error("layer {layer} out of range [1, {layer_count}]")]
    LayerOutOfRange { layer: usize, layer_count: usize },

    #[error("window half-width k={k} invalid for {layer_count} layers (0 <= k <= {max})")]
    InvalidWindow {
        k: usize,
        layer_count: usize,
        max: usize,
    },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
