use std::path::PathBuf;

use crate::Scheme;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("signal too short: need at least {needed} samples, have {available}")]
    SignalTooShort { needed: usize, available: usize },

    #[error("no beat window fits inside the record ({skipped} peaks skipped)")]
    NoValidBeats { skipped: usize },

    #[error("correlation matrix is singular or ill-conditioned (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("key parse error at position {position}: {message}")]
    KeyParse { position: usize, message: String },

    #[error("store line {line}: {message}")]
    StoreFormat { line: usize, message: String },

    #[error("subject '{subject_id}' is already enrolled under {scheme}")]
    DuplicateEnrollment { subject_id: String, scheme: Scheme },

    #[error("subject '{subject_id}' is not enrolled under {scheme}")]
    NotFound { subject_id: String, scheme: Scheme },

    #[error("scheme mismatch: credential is {expected}, key is {found}")]
    SchemeMismatch { expected: Scheme, found: Scheme },

    #[error("subject '{subject_id}' has {available} beats, needs {needed}")]
    InsufficientBeats {
        subject_id: String,
        needed: usize,
        available: usize,
    },

    #[error("fpr - fnr never changes sign on the k_iqr grid (max {max_k}); extend the grid")]
    NoEerCrossing { max_k: f64 },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
