use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite parameter: {0}")]
    NonFiniteParameter(&'static str),
    #[error("conditioning block is numerically singular")]
    SingularConditioningBlock,
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("scene contains no gaussians")]
    EmptyScene,
    #[error("gaussian lies behind the near plane")]
    CulledBehindCamera,
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest error at `{field}`: {message}")]
    Manifest { field: String, message: String },
    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("image error: {0}")]
    Image(String),
    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::ContractViolation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }
}
