use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: u64,
        message: String,
    },

    #[error("duplicate item id: {0}")]
    DuplicateItem(String),

    #[error("unknown item: {0}")]
    UnknownItem(String),

    #[error("item sold twice: {0}")]
    ItemSoldTwice(String),

    #[error("unknown user: {0}")]
    UnknownUser(String),

    #[error("dimension mismatch at {context}: got {got}, expected {expected}")]
    DimensionMismatch {
        context: String,
        got: usize,
        expected: usize,
    },

    #[error("non-finite value for {0}")]
    NonFinite(String),

    #[error("zero vector cannot be normalized: {0}")]
    ZeroVector(String),

    #[error("unknown {attribute} token {token:?} on item {item}")]
    UnknownToken {
        item: String,
        attribute: &'static str,
        token: String,
    },

    #[error("image too small: {width}x{height} (need at least 3x3)")]
    ImageTooSmall { width: u32, height: u32 },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("empty profile")]
    EmptyProfile,

    #[error("empty pool")]
    EmptyPool,

    #[error("empty positive set")]
    EmptyPositives,

    #[error("no training instances")]
    NoInstances,

    #[error("no feature store loaded for source {0}")]
    MissingStore(&'static str),

    #[error("no evaluable cases: no transaction has an earlier purchase by the same user")]
    NoEvaluableCases,

    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
