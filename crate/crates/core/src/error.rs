use thiserror::Error;

/// Errors raised across the pipeline. Variants mirror the contract each
/// operation documents: configuration problems, domain violations, shape
/// mismatches, and so on.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("vocabulary error: {0}")]
    Vocab(String),
    #[error("state error: {0}")]
    State(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("ordering error: {0}")]
    Ordering(String),
    #[error("legality error: {0}")]
    Legality(String),
    #[error("malformed decoding embedding: {0}")]
    MalformedEmbedding(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
