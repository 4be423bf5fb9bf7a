use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("non-finite value during training: {0}")]
    NonFinite(String),

    #[error("no steps recorded in episode")]
    NoSteps,

    #[error("audit log tampered at entry {index}: {reason}")]
    Tamper { index: usize, reason: String },

    #[error("run `{0}` already present in ledger; refusing to overwrite")]
    DuplicateRun(String),

    #[error("ledger is missing required baseline run: {0}")]
    MissingBaseline(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
