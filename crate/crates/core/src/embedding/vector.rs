use serde::{Deserialize, Serialize};

use super::EmbeddingError;
use crate::scalar::Scalar;

/// Fixed-length real vector; the currency of every similarity computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector<T>(Vec<T>);

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        EmbeddingVector(values)
    }

    pub fn zeros(dimension: usize) -> Self {
        EmbeddingVector(vec![T::zero(); dimension])
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn into_values(self) -> Vec<T> {
        self.0
    }

    pub fn dot(&self, other: &Self) -> T {
        self.0.iter().zip(&other.0).map(|(&a, &b)| a * b).sum()
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, factor: T) -> Self {
        EmbeddingVector(self.0.iter().map(|&x| x * factor).collect())
    }

    /// Rescales to unit length; zero vectors are returned unchanged.
    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > T::zero() {
            for x in &mut self.0 {
                *x = *x / n;
            }
        }
        self
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|x| x.is_zero())
    }

    /// Converts between scalar types.
    pub fn cast<U: Scalar>(&self) -> EmbeddingVector<U> {
        EmbeddingVector(self.0.iter().map(|&x| U::lit(x.to_f64_lossy())).collect())
    }
}

impl<T> From<Vec<T>> for EmbeddingVector<T> {
    fn from(values: Vec<T>) -> Self {
        EmbeddingVector(values)
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> Result<T, EmbeddingError> {
    if a.dimension() != b.dimension() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dimension(),
            found: b.dimension(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na.is_zero() || nb.is_zero() || !na.is_finite() || !nb.is_finite() {
        return Err(EmbeddingError::DegenerateVector);
    }
    let c = a.dot(b) / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}

/// Coordinate-wise arithmetic mean. Not re-normalized.
pub fn mean<'a, T: Scalar, I>(vectors: I) -> Result<EmbeddingVector<T>, EmbeddingError>
where
    I: IntoIterator<Item = &'a EmbeddingVector<T>>,
{
    let mut iter = vectors.into_iter();
    let first = iter.next().ok_or(EmbeddingError::EmptyList)?;
    // Running mean: exact on repeated vectors, unlike sum-then-divide.
    let mut acc = first.0.clone();
    let mut count = T::one();
    for v in iter {
        if v.dimension() != acc.len() {
            return Err(EmbeddingError::DimensionMismatch {
                expected: acc.len(),
                found: v.dimension(),
            });
        }
        count = count + T::one();
        for (m, &x) in acc.iter_mut().zip(&v.0) {
            *m = *m + (x - *m) / count;
        }
    }
    Ok(EmbeddingVector(acc))
}
