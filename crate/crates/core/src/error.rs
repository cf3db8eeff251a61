use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum CfaError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 8], found: [u8; 8] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: {context}")]
    Truncated { context: String },

    #[error("non-finite value in tensor {tensor} at element offset {offset}")]
    NonFinite { tensor: usize, offset: usize },

    #[error("dimension {value} exceeds the 2^31-1 limit")]
    DimOverflow { value: u64 },

    #[error("trailing bytes after payload ({0} bytes)")]
    TrailingBytes(usize),

    #[error("invalid UTF-8 in trailer")]
    BadTrailer,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("scale {scale} with spatial size {height}x{width} does not evenly divide the largest scale {max_height}x{max_width}")]
    ScaleRatio {
        scale: usize,
        height: usize,
        width: usize,
        max_height: usize,
        max_width: usize,
    },

    #[error("index {index} out of range 1..={len}")]
    OutOfRange { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("malformed manifest JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("mask {path}: {reason}")]
    Mask { path: PathBuf, reason: String },

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("non-finite loss at epoch {epoch}, sample {sample}, term {term}")]
    NonFiniteLoss {
        epoch: usize,
        sample: String,
        term: &'static str,
    },

    #[error("bank needs {needed} centers but only {available} patches are available")]
    TooFewPatches { needed: usize, available: usize },

    #[error("requested {requested} neighbors from a bank of {available}")]
    TooManyNeighbors { requested: usize, available: usize },

    #[error("metric needs both classes: {0}")]
    SingleClass(&'static str),
}

impl CfaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CfaError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = CfaError> = std::result::Result<T, E>;
