use std::path::PathBuf;

use thiserror::Error;

use switchgan_tensor::io::BlobError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("{path}: unsupported encoding ({detail}); expected 16-bit PCM")]
    NotPcm { path: PathBuf, detail: String },
    #[error("{0}: audio payload is empty")]
    EmptyAudio(PathBuf),
    #[error("{path}: invalid WAV container: {detail}")]
    InvalidWav { path: PathBuf, detail: String },
    #[error("{path}:{line}: {detail}")]
    Parse { path: PathBuf, line: usize, detail: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("wrong value domain: expected {expected}, got {actual}")]
    Domain { expected: String, actual: String },
    #[error("degenerate normalisation range [{min}, {max}]")]
    DegenerateRange { min: f64, max: f64 },
    #[error("unknown class label `{0}`")]
    UnknownLabel(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing prerequisite: {0}")]
    Prerequisite(String),
    #[error("{0} already exists; pass --force to overwrite")]
    Exists(PathBuf),
    #[error(transparent)]
    Blob(#[from] BlobError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
