use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate rating for user {user}, item {item}")]
    DuplicateEntry { user: u32, item: u32 },

    #[error("non-finite rating for user {user}, item {item}")]
    NonFiniteRating { user: u32, item: u32 },

    #[error("id out of range: user {user} / item {item} outside {num_users}x{num_items}")]
    IdOutOfRange {
        user: u32,
        item: u32,
        num_users: usize,
        num_items: usize,
    },

    #[error("ratings matrix is empty")]
    EmptyMatrix,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}:{line}: malformed line: {reason}")]
    MalformedLine { path: PathBuf, line: usize, reason: String },

    #[error("unknown format `{0}`")]
    UnknownFormat(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("zero vector for id {0}")]
    ZeroVector(String),

    #[error("similarity metric requires embeddings")]
    MissingEmbeddings,

    #[error("training diverged at epoch {epoch} (objective is not finite)")]
    Diverged { epoch: usize, trace: Vec<f64> },

    #[error("empty input")]
    EmptyInput,

    #[error("invalid model file: {0}")]
    InvalidModel(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
