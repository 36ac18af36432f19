//! Retrieval-based dialogue engine for guided Self-Attachment Technique
//! conversations.
//!
//! The engine comprehends each user turn (keyword rules with negation
//! flipping, nearest-centroid intent and emotion classifiers), walks a
//! data-driven conversation flowchart, and answers from pre-scored utterance
//! pools, choosing the reply most coherent with recent history. A separate
//! FAQ retriever answers questions about the technique itself.
//!
//! The numeric core is generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below fix the engine's working precision.

pub mod comprehension;
pub mod config;
pub mod embedding;
pub mod engine;
pub mod flow;
pub mod model;
pub mod reward;
pub mod scalar;
pub mod selector;
pub mod teacher;
pub mod text;

pub use config::Config;
pub use engine::{AssetError, Deployment, Engine};
pub use scalar::Scalar;

/// Embedding vector at engine precision.
pub type Embedding = embedding::EmbeddingVector<f64>;
/// Embedding store at engine precision.
pub type Store = embedding::EmbeddingStore<f64>;
/// Nearest-centroid classifier at engine precision.
pub type Centroids = comprehension::CentroidModel<f64>;
/// Candidate rewrite at engine precision.
pub type Candidate = reward::CandidateRewrite<f64>;
/// FAQ knowledge base at engine precision.
pub type Teacher = teacher::KnowledgeBase<f64>;
