use thiserror::Error;

/// Errors raised anywhere in the workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("index {index} out of range for size {bound}")]
    Index { index: usize, bound: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("configuration error in `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("measurement error: {0}")]
    Measurement(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { key: key.into(), reason: reason.into() }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}

/// Failures specific to reading a checkpoint stream.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,

    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint config mismatch on `{key}`: checkpoint has {stored}, caller has {given}")]
    ConfigMismatch { key: String, stored: String, given: String },

    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),

    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, Error>;
