use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the library.
///
/// Variants are grouped by [`ErrorClass`] so the command-line front end can
/// map them onto stable exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("layer `{layer}`: incompatible input shape {got:?} (expected {expected})")]
    LayerShape {
        layer: String,
        expected: String,
        got: Vec<usize>,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("parameter `{key}` has shape {got:?}, expected {expected:?}")]
    ParamShape {
        key: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("backward requires a tape recorded by a train-mode forward pass")]
    NoTape,

    #[error("operation `{0}` has no backward rule")]
    NotDifferentiable(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("target value {0} is not a binary label")]
    InvalidTarget(f64),

    #[error("input shorter than receptive window: {frames} frames, need at least {min}")]
    InputTooShort { frames: usize, min: usize },

    #[error("bad magic: expected \"AVF1\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),

    #[error("truncated payload while reading {context}")]
    Truncated { context: String },

    #[error("{0} trailing bytes after last entry")]
    TrailingBytes(usize),

    #[error("missing entry `{0}`")]
    MissingEntry(String),

    #[error("wav: {0}")]
    Wav(String),

    #[error("sample rate {found} Hz is not supported, expected {expected} Hz")]
    SampleRate { found: u32, expected: u32 },

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure category.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    MissingFile,
    Data,
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 2,
            ErrorClass::MissingFile => 3,
            ErrorClass::Data => 4,
            ErrorClass::Numeric => 5,
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            InvalidArgument(_) | InvalidSpec(_) => ErrorClass::Usage,
            File { source, .. } if source.kind() == std::io::ErrorKind::NotFound => ErrorClass::MissingFile,
            Io(e) if e.kind() == std::io::ErrorKind::NotFound => ErrorClass::MissingFile,
            NonFinite(_) | Divergence { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
