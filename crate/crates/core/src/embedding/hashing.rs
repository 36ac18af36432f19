//! Deterministic bag-of-tokens embedding used when no precomputed vector exists.

use super::EmbeddingVector;
use crate::scalar::Scalar;
use crate::text;

pub const DEFAULT_DIMENSION: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a. Stable across platforms, processes and toolchains.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn bucket(token: &str, dimension: usize) -> usize {
    (fnv1a(token.as_bytes()) % dimension as u64) as usize
}

/// Hashes every token into one of `dimension` buckets, counts, and scales to
/// unit length. Text with no tokens (punctuation only) is hashed whole so the
/// result is never all-zero.
pub fn hash_embed<T: Scalar>(input: &str, dimension: usize) -> EmbeddingVector<T> {
    let mut counts = vec![0u32; dimension];
    let tokens = text::tokenize(input);
    if tokens.is_empty() {
        counts[bucket(&text::normalize(input.trim()), dimension)] += 1;
    }
    for t in &tokens {
        counts[bucket(t, dimension)] += 1;
    }
    let values = counts
        .into_iter()
        .map(|c| T::from_u32(c).expect("count fits in scalar"))
        .collect();
    EmbeddingVector::new(values).normalized()
}
