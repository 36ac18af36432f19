use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ComprehensionError;
use crate::embedding::{cosine, mean, EmbeddingStore, EmbeddingVector};
use crate::model::EmotionLabel;
use crate::scalar::Scalar;

/// Class means of training embeddings, one per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidModel<T> {
    pub dimension: usize,
    pub centroids: BTreeMap<String, EmbeddingVector<T>>,
    pub training_counts: BTreeMap<String, usize>,
}

impl<T: Scalar> CentroidModel<T> {
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.centroids.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// Every centroid multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        CentroidModel {
            dimension: self.dimension,
            centroids: self.centroids.iter().map(|(k, v)| (k.clone(), v.scaled(factor))).collect(),
            training_counts: self.training_counts.clone(),
        }
    }

    /// Label of maximal cosine to `query`, with that cosine. Ties go to the
    /// lexicographically first label.
    pub fn nearest(&self, query: &EmbeddingVector<T>) -> Result<(String, T), ComprehensionError> {
        let mut best: Option<(&str, T)> = None;
        for (label, centroid) in &self.centroids {
            let c = cosine(query, centroid)?;
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((label, c));
            }
        }
        best.map(|(l, c)| (l.to_owned(), c)).ok_or(ComprehensionError::EmptyModel)
    }
}

/// Centroid per label present in `labeled`.
pub fn train_centroids<T: Scalar>(
    labeled: &[(String, String)],
    store: &EmbeddingStore<T>,
) -> Result<CentroidModel<T>, ComprehensionError> {
    let labels: Vec<String> = labeled
        .iter()
        .map(|(_, l)| l.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    train_centroids_for(&labels, labeled, store)
}

/// Centroid per label in `labels`; every label needs at least one example
/// and examples with other labels are rejected.
pub fn train_centroids_for<T: Scalar>(
    labels: &[String],
    labeled: &[(String, String)],
    store: &EmbeddingStore<T>,
) -> Result<CentroidModel<T>, ComprehensionError> {
    let mut groups: BTreeMap<String, Vec<EmbeddingVector<T>>> =
        labels.iter().map(|l| (l.clone(), Vec::new())).collect();
    for (text, label) in labeled {
        let bucket = groups
            .get_mut(label)
            .ok_or_else(|| ComprehensionError::UnknownLabel(label.clone()))?;
        bucket.push(store.embed(text)?);
    }
    let mut centroids = BTreeMap::new();
    let mut training_counts = BTreeMap::new();
    for (label, vectors) in groups {
        if vectors.is_empty() {
            return Err(ComprehensionError::NoExamples(label));
        }
        training_counts.insert(label.clone(), vectors.len());
        centroids.insert(label, mean(&vectors)?);
    }
    if centroids.is_empty() {
        return Err(ComprehensionError::EmptyModel);
    }
    Ok(CentroidModel {
        dimension: store.dimension(),
        centroids,
        training_counts,
    })
}

/// `(label, confidence)` for `text`: the nearest centroid and its cosine.
pub fn classify_intent<T: Scalar>(
    text: &str,
    model: &CentroidModel<T>,
    store: &EmbeddingStore<T>,
) -> Result<(String, T), ComprehensionError> {
    if model.is_empty() {
        return Err(ComprehensionError::EmptyModel);
    }
    let query = store.embed(text)?;
    model.nearest(&query)
}

/// Centroid model guaranteed to cover exactly the twelve emotion labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionModel<T>(CentroidModel<T>);

impl<T: Scalar> EmotionModel<T> {
    pub fn new(model: CentroidModel<T>) -> Result<Self, ComprehensionError> {
        let complete = model.len() == EmotionLabel::ALL.len()
            && EmotionLabel::ALL.iter().all(|l| model.centroids.contains_key(l.as_str()));
        if !complete {
            return Err(ComprehensionError::IncompleteEmotionModel(model.len()));
        }
        Ok(EmotionModel(model))
    }

    /// Trains on `(text, label)` pairs; labels must parse as emotions.
    pub fn train(labeled: &[(String, String)], store: &EmbeddingStore<T>) -> Result<Self, ComprehensionError> {
        for (_, l) in labeled {
            l.parse::<EmotionLabel>()
                .map_err(|_| ComprehensionError::UnknownLabel(l.clone()))?;
        }
        let present: std::collections::BTreeSet<&str> = labeled.iter().map(|(_, l)| l.as_str()).collect();
        if present.len() != EmotionLabel::ALL.len() {
            return Err(ComprehensionError::IncompleteEmotionModel(present.len()));
        }
        Self::new(train_centroids(labeled, store)?)
    }

    pub fn centroids(&self) -> &CentroidModel<T> {
        &self.0
    }
}

pub fn classify_emotion<T: Scalar>(
    text: &str,
    model: &EmotionModel<T>,
    store: &EmbeddingStore<T>,
) -> Result<(EmotionLabel, T), ComprehensionError> {
    let (label, confidence) = classify_intent(text, &model.0, store)?;
    let label = label
        .parse::<EmotionLabel>()
        .map_err(|_| ComprehensionError::UnknownLabel(label))?;
    Ok((label, confidence))
}

/// Pluggable text classifier. The shipped implementation is nearest-centroid;
/// a remote model server can stand in behind the same interface.
pub trait IntentClassifier: Send + Sync {
    /// Best label and its confidence in `[-1, 1]`.
    fn classify(&self, text: &str) -> Result<(String, f64), ComprehensionError>;
    fn labels(&self) -> Vec<String>;
}

/// [`CentroidModel`] bound to the store it embeds queries with.
pub struct CentroidClassifier<T: Scalar> {
    pub model: CentroidModel<T>,
    pub store: Arc<EmbeddingStore<T>>,
}

impl<T: Scalar> IntentClassifier for CentroidClassifier<T> {
    fn classify(&self, text: &str) -> Result<(String, f64), ComprehensionError> {
        classify_intent(text, &self.model, &self.store).map(|(l, c)| (l, c.to_f64_lossy()))
    }

    fn labels(&self) -> Vec<String> {
        self.model.labels().map(str::to_owned).collect()
    }
}
