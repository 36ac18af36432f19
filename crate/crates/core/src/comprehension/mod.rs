//! Turning a raw user utterance into an outcome label.
//!
//! Yes/no style nodes use keyword rules with negated-verb flipping; open
//! questions and the feeling question use nearest-centroid classifiers over
//! embeddings.

mod centroid;
mod dataset;
mod metrics;
mod rules;

use std::path::Path;

use thiserror::Error;

use crate::embedding::EmbeddingError;

pub use centroid::{
    classify_emotion, classify_intent, train_centroids, train_centroids_for, CentroidClassifier, CentroidModel,
    EmotionModel, IntentClassifier,
};
pub use dataset::{read_labeled_file, parse_labeled};
pub use metrics::{evaluate, Averages, ClassMetrics, EvaluationReport};
pub use rules::{classify_polar, classify_yes_no, negation_count, KeywordRule, NegationLexicon, RuleSet};

/// Below this cosine a classifier's answer is discarded and the node re-asks.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComprehensionError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("model has no labels")]
    EmptyModel,
    #[error("label {0:?} has no training examples")]
    NoExamples(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("incomplete emotion model: {0} of 12 labels")]
    IncompleteEmotionModel(usize),
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("{0}")]
    Io(String),
}

impl ComprehensionError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        ComprehensionError::Io(format!("{}: {e}", path.display()))
    }
}
