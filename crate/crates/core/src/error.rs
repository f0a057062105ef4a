use std::path::PathBuf;

/// Errors raised by the signal-processing, dataset and model stages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("malformed WAV file {path}: {reason}")]
    MalformedWav { path: PathBuf, reason: String },

    #[error("unsupported audio codec in {path}: {reason}")]
    UnsupportedCodec { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("input too short: {0}")]
    TooShort(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("unknown dataset id `{0}`")]
    UnknownDataset(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("gradient cache is stale: produced at generation {cache}, model is at {model}")]
    StaleCache { cache: u64, model: u64 },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        /// Best finite parameters seen before the failure, if any epoch completed.
        last_good: Option<Box<crate::model::ModelState<f32>>>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("image encoding error: {0}")]
    Image(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
