//! Embedding vectors, their arithmetic, and where they come from.

mod hashing;
mod remote;
mod store;
mod vector;

use std::path::Path;

use thiserror::Error;

pub use hashing::{bucket, fnv1a, hash_embed, DEFAULT_DIMENSION};
pub use remote::RemoteProvider;
pub use store::{read_entries, sidecar_path, write_entries, EmbeddingStore, Provenance, STORE_MAGIC};
pub use vector::{cosine, mean, EmbeddingVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("empty input")]
    EmptyInput,
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("degenerate vector")]
    DegenerateVector,
    #[error("cannot average an empty list of vectors")]
    EmptyList,
    #[error("no embedding stored for {0:?}")]
    NotInStore(String),
    #[error("{0}")]
    Io(String),
    #[error("malformed embedding store: {0}")]
    Format(String),
}

impl EmbeddingError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        EmbeddingError::Io(format!("{}: {e}", path.display()))
    }
}

/// Source of embeddings for texts missing from a store.
pub trait EmbeddingProvider: Send + Sync {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError>;
}
