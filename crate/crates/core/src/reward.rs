//! Scoring candidate rewrites of foundational bot lines.
//!
//! Each candidate gets four raw rewards (fluency from perplexity and token
//! repetition, a semantic logit, an empathy logit, cosine similarity to its
//! base line). Every component is min-max normalized to `[-1, 1]` over the
//! candidate's batch and the normalized components are combined linearly.
//! Perplexity and logits are ingested from an external scorer.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, EmbeddingError, EmbeddingStore, EmbeddingVector};
use crate::model::Formality;
use crate::scalar::Scalar;
use crate::selector::Utterance;
use crate::text::tokenize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("empty text")]
    EmptyText,
    #[error("degenerate fluency denominator: perplexity {perplexity} minus repetition penalty {penalty} is not positive")]
    DegenerateFluency { perplexity: f64, penalty: f64 },
    #[error("batch too small to normalize")]
    BatchTooSmall,
    #[error("support mismatch: {0} vs {1} outcomes")]
    SupportMismatch(usize, usize),
    #[error("absolute continuity violated at outcome {0}")]
    AbsoluteContinuity(usize),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("unknown base {0}")]
    UnknownBase(String),
    #[error("{file} line {line}: {message}")]
    Format { file: String, line: usize, message: String },
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRewrite<T> {
    pub candidate_id: String,
    pub base_id: String,
    pub text: String,
    pub perplexity: T,
    pub semantic_logit: T,
    pub empathy_logit: T,
    pub embedding_ref: String,
}

/// The foundational line a group of candidates rewrites.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseUtterance {
    pub base_id: String,
    pub node_id: String,
    pub formality: Formality,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights<T> {
    pub fluency: T,
    pub semantic: T,
    pub empathy: T,
    pub similarity: T,
}

impl<T: Scalar> Default for Weights<T> {
    fn default() -> Self {
        Weights {
            fluency: T::one(),
            semantic: T::one(),
            empathy: T::one(),
            similarity: T::one(),
        }
    }
}

impl<T: Scalar> Weights<T> {
    /// Parses `wf,ws,we,wsim`.
    pub fn parse(s: &str) -> Result<Self, RewardError> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(RewardError::InvalidWeights(format!("expected 4 comma-separated weights, got {s:?}")));
        }
        let mut w = [T::zero(); 4];
        for (slot, p) in w.iter_mut().zip(&parts) {
            let x: f64 = p.parse().map_err(|_| RewardError::InvalidWeights(format!("not a number: {p:?}")))?;
            if !x.is_finite() {
                return Err(RewardError::InvalidWeights(format!("not finite: {p:?}")));
            }
            *slot = T::lit(x);
        }
        Ok(Weights {
            fluency: w[0],
            semantic: w[1],
            empathy: w[2],
            similarity: w[3],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown<T> {
    pub fluency: T,
    pub semantic: T,
    pub empathy: T,
    pub similarity: T,
    pub composite: T,
    pub weights: Weights<T>,
}

impl<T: Scalar> RewardBreakdown<T> {
    fn combine(fluency: T, semantic: T, empathy: T, similarity: T, weights: Weights<T>) -> Self {
        let composite = weights.fluency * fluency
            + weights.semantic * semantic
            + weights.empathy * empathy
            + weights.similarity * similarity;
        RewardBreakdown {
            fluency,
            semantic,
            empathy,
            similarity,
            composite,
            weights,
        }
    }
}

/// `c_rp` times the number of token occurrences beyond each token's first.
pub fn repetition_penalty<T: Scalar>(text: &str, c_rp: T) -> T {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for tok in tokenize(text) {
        *counts.entry(tok).or_default() += 1;
    }
    let extra: usize = counts.values().map(|&c| c - 1).sum();
    c_rp * T::lit(extra as f64)
}

/// `1 / (perplexity - repetition_penalty(text))`.
pub fn fluency_reward<T: Scalar>(perplexity: T, text: &str, c_rp: T) -> Result<T, RewardError> {
    if text.trim().is_empty() {
        return Err(RewardError::EmptyText);
    }
    let rp = repetition_penalty(text, c_rp);
    let denom = perplexity - rp;
    if !(denom > T::zero()) {
        return Err(RewardError::DegenerateFluency {
            perplexity: perplexity.to_f64_lossy(),
            penalty: rp.to_f64_lossy(),
        });
    }
    Ok(T::one() / denom)
}

/// Maps the batch minimum to -1 and maximum to +1 linearly; a constant batch
/// maps to all zeros.
pub fn minmax_normalize<T: Scalar>(values: &[T]) -> Result<Vec<T>, RewardError> {
    if values.len() < 2 {
        return Err(RewardError::BatchTooSmall);
    }
    let min = values.iter().copied().fold(T::infinity(), T::min);
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    let range = max - min;
    if range == T::zero() {
        return Ok(vec![T::zero(); values.len()]);
    }
    let two = T::lit(2.0);
    Ok(values.iter().map(|&x| two * ((x - min) / range) - T::one()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDistribution<T> {
    probabilities: Vec<T>,
}

impl<T: Scalar> PolicyDistribution<T> {
    pub fn new(probabilities: Vec<T>) -> Result<Self, RewardError> {
        if probabilities.is_empty() {
            return Err(RewardError::InvalidDistribution("empty support".into()));
        }
        if probabilities.iter().any(|p| !p.is_finite() || *p < T::zero()) {
            return Err(RewardError::InvalidDistribution("negative or non-finite probability".into()));
        }
        let sum: T = probabilities.iter().copied().sum();
        let tol = T::lit(1e-9).max(T::epsilon() * T::lit(4.0 * probabilities.len() as f64));
        if (sum - T::one()).abs() > tol {
            return Err(RewardError::InvalidDistribution(format!("probabilities sum to {sum}")));
        }
        Ok(PolicyDistribution { probabilities })
    }

    pub fn probabilities(&self) -> &[T] {
        &self.probabilities
    }
}

/// `sum p_i ln(p_i / q_i)` in nats, with `0 ln 0 = 0`.
///
/// Library math only: nothing in the engine trains a policy.
pub fn kl_divergence<T: Scalar>(p: &PolicyDistribution<T>, q: &PolicyDistribution<T>) -> Result<T, RewardError> {
    let (p, q) = (p.probabilities(), q.probabilities());
    if p.len() != q.len() {
        return Err(RewardError::SupportMismatch(p.len(), q.len()));
    }
    let mut total = T::zero();
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == T::zero() {
            continue;
        }
        if qi == T::zero() {
            return Err(RewardError::AbsoluteContinuity(i));
        }
        total = total + pi * (pi / qi).ln();
    }
    // Round-off can leave tiny negatives when p == q.
    Ok(total.max(T::zero()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate<T> {
    pub candidate: CandidateRewrite<T>,
    pub reward: RewardBreakdown<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchScores<T> {
    /// In input order.
    pub scored: Vec<ScoredCandidate<T>>,
    pub rejected: Vec<(String, RewardError)>,
}

/// Scores one batch of candidates against their shared base embedding.
/// Candidates with a degenerate fluency denominator are rejected
/// individually; the rest are normalized among themselves.
pub fn score_batch<T: Scalar>(
    batch: &[CandidateRewrite<T>],
    base_embedding: &EmbeddingVector<T>,
    weights: Weights<T>,
    c_rp: T,
    store: &EmbeddingStore<T>,
) -> Result<BatchScores<T>, RewardError> {
    let mut kept = Vec::new();
    let mut raw: [Vec<T>; 4] = Default::default();
    let mut rejected = Vec::new();
    for c in batch {
        let fluency = match fluency_reward(c.perplexity, &c.text, c_rp) {
            Ok(f) => f,
            Err(e) => {
                tracing::warn!(candidate = %c.candidate_id, error = %e, "candidate rejected");
                rejected.push((c.candidate_id.clone(), e));
                continue;
            }
        };
        let similarity = cosine(&store.embed(&c.embedding_ref)?, base_embedding)?;
        raw[0].push(fluency);
        raw[1].push(c.semantic_logit);
        raw[2].push(c.empathy_logit);
        raw[3].push(similarity);
        kept.push(c);
    }
    let [f, s, e, sim] = raw.map(|component| minmax_normalize(&component));
    let (f, s, e, sim) = (f?, s?, e?, sim?);
    let scored = kept
        .into_iter()
        .enumerate()
        .map(|(i, c)| ScoredCandidate {
            candidate: c.clone(),
            reward: RewardBreakdown::combine(f[i], s[i], e[i], sim[i], weights),
        })
        .collect();
    Ok(BatchScores { scored, rejected })
}

/// Scores one candidate in the context of its batch.
pub fn composite_reward<T: Scalar>(
    candidate: &CandidateRewrite<T>,
    base_embedding: &EmbeddingVector<T>,
    weights: Weights<T>,
    batch: &[CandidateRewrite<T>],
    c_rp: T,
    store: &EmbeddingStore<T>,
) -> Result<RewardBreakdown<T>, RewardError> {
    let scores = score_batch(batch, base_embedding, weights, c_rp, store)?;
    if let Some((_, e)) = scores.rejected.iter().find(|(id, _)| *id == candidate.candidate_id) {
        return Err(e.clone());
    }
    scores
        .scored
        .into_iter()
        .find(|s| s.candidate.candidate_id == candidate.candidate_id)
        .map(|s| s.reward)
        .ok_or_else(|| RewardError::UnknownBase(candidate.base_id.clone()))
}

/// One pool entry produced from the candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry<T> {
    pub base_id: String,
    pub rank: usize,
    pub candidate: CandidateRewrite<T>,
    /// `None` when the base had too few candidates to score.
    pub reward: Option<RewardBreakdown<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolBuild<T> {
    /// Ordered by base id, then rank.
    pub entries: Vec<PoolEntry<T>>,
    pub diagnostics: Vec<String>,
}

/// Scores each base's candidates and keeps the best `keep_top` of each.
pub fn build_pool<T: Scalar>(
    candidates: &[CandidateRewrite<T>],
    bases: &BTreeMap<String, BaseUtterance>,
    weights: Weights<T>,
    keep_top: usize,
    c_rp: T,
    store: &EmbeddingStore<T>,
) -> Result<PoolBuild<T>, RewardError> {
    if keep_top == 0 {
        return Err(RewardError::InvalidWeights("keep_top must be positive".into()));
    }
    let mut groups: BTreeMap<&str, Vec<CandidateRewrite<T>>> = BTreeMap::new();
    for c in candidates {
        groups.entry(c.base_id.as_str()).or_default().push(c.clone());
    }
    let mut entries = Vec::new();
    let mut diagnostics = Vec::new();
    for (base_id, group) in groups {
        let base = bases.get(base_id).ok_or_else(|| RewardError::UnknownBase(base_id.to_owned()))?;
        if group.len() < 2 {
            let msg = format!("base {base_id}: single candidate passed through unscored");
            tracing::warn!("{msg}");
            diagnostics.push(msg);
            entries.extend(group.into_iter().map(|candidate| PoolEntry {
                base_id: base_id.to_owned(),
                rank: 1,
                candidate,
                reward: None,
            }));
            continue;
        }
        let base_embedding = store.embed(&base.text)?;
        let scores = match score_batch(&group, &base_embedding, weights, c_rp, store) {
            Ok(s) => s,
            Err(RewardError::BatchTooSmall) => {
                // Rejections left a single survivor.
                let mut survivors = Vec::new();
                for c in &group {
                    match fluency_reward(c.perplexity, &c.text, c_rp) {
                        Ok(_) => survivors.push(c.clone()),
                        Err(e) => diagnostics.push(format!("candidate {}: {e}", c.candidate_id)),
                    }
                }
                diagnostics.push(format!("base {base_id}: fewer than 2 valid candidates, passed through unscored"));
                entries.extend(survivors.into_iter().map(|candidate| PoolEntry {
                    base_id: base_id.to_owned(),
                    rank: 1,
                    candidate,
                    reward: None,
                }));
                continue;
            }
            Err(e) => return Err(e),
        };
        diagnostics.extend(scores.rejected.iter().map(|(id, e)| format!("candidate {id}: {e}")));
        let mut ranked = scores.scored;
        ranked.sort_by(|a, b| {
            b.reward
                .composite
                .partial_cmp(&a.reward.composite)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.candidate.candidate_id.cmp(&b.candidate.candidate_id))
        });
        ranked.truncate(keep_top);
        entries.extend(ranked.into_iter().enumerate().map(|(i, s)| PoolEntry {
            base_id: base_id.to_owned(),
            rank: i + 1,
            candidate: s.candidate,
            reward: Some(s.reward),
        }));
    }
    Ok(PoolBuild { entries, diagnostics })
}

impl<T: Scalar> PoolBuild<T> {
    /// Pool-file records for the kept candidates.
    pub fn utterances(&self, bases: &BTreeMap<String, BaseUtterance>) -> Vec<Utterance> {
        self.entries
            .iter()
            .map(|e| {
                let base = &bases[&e.base_id];
                Utterance {
                    utterance_id: e.candidate.candidate_id.clone(),
                    node_id: base.node_id.clone(),
                    formality: base.formality,
                    text: e.candidate.text.clone(),
                    embedding_ref: e.candidate.embedding_ref.clone(),
                    composite_reward: e.reward.map(|r| r.composite.to_f64_lossy()),
                }
            })
            .collect()
    }

    /// Tab-separated report with every reward component.
    pub fn render_scores(&self) -> String {
        let mut out = String::from("base_id\trank\tcandidate_id\tfluency\tsemantic\tempathy\tsimilarity\tcomposite\ttext\n");
        for e in &self.entries {
            let cols = match &e.reward {
                Some(r) => [r.fluency, r.semantic, r.empathy, r.similarity, r.composite]
                    .map(|x| format!("{:.6}", x.to_f64_lossy()))
                    .join("\t"),
                None => ["-"; 5].join("\t"),
            };
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", e.base_id, e.rank, e.candidate.candidate_id, cols, e.candidate.text);
        }
        out
    }
}

fn records(content: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    content.lines().enumerate().filter_map(|(i, line)| {
        let line = line.trim_end_matches('\r');
        (!line.trim().is_empty() && !line.starts_with('#')).then(|| (i + 1, line.split('\t').collect()))
    })
}

/// Parses candidate score records: `candidate_id, base_id, text, perplexity,
/// semantic_logit, empathy_logit`, tab-separated.
pub fn parse_candidates<T: Scalar>(content: &str) -> Result<Vec<CandidateRewrite<T>>, RewardError> {
    let mut out = Vec::new();
    for (line, cols) in records(content) {
        let err = |message: String| RewardError::Format {
            file: "candidates".into(),
            line,
            message,
        };
        if cols.len() != 6 {
            return Err(err(format!("expected 6 tab-separated columns, found {}", cols.len())));
        }
        let num = |i: usize| -> Result<T, RewardError> {
            cols[i]
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .map(T::lit)
                .ok_or_else(|| err(format!("bad number {:?}", cols[i])))
        };
        let text = cols[2].trim();
        if text.is_empty() {
            return Err(err("empty text".into()));
        }
        let perplexity = num(3)?;
        if !(perplexity > T::zero()) {
            return Err(err("perplexity must be positive".into()));
        }
        out.push(CandidateRewrite {
            candidate_id: cols[0].trim().to_owned(),
            base_id: cols[1].trim().to_owned(),
            text: text.to_owned(),
            perplexity,
            semantic_logit: num(4)?,
            empathy_logit: num(5)?,
            embedding_ref: text.to_owned(),
        });
    }
    Ok(out)
}

/// Parses base records: `base_id, node_id, formality, text`, tab-separated.
pub fn parse_bases(content: &str) -> Result<BTreeMap<String, BaseUtterance>, RewardError> {
    let mut out = BTreeMap::new();
    for (line, cols) in records(content) {
        let err = |message: String| RewardError::Format {
            file: "bases".into(),
            line,
            message,
        };
        if cols.len() != 4 {
            return Err(err(format!("expected 4 tab-separated columns, found {}", cols.len())));
        }
        let formality = cols[2].trim().parse().map_err(|e: crate::model::ModelError| err(e.to_string()))?;
        let base = BaseUtterance {
            base_id: cols[0].trim().to_owned(),
            node_id: cols[1].trim().to_owned(),
            formality,
            text: cols[3].trim().to_owned(),
        };
        if out.insert(base.base_id.clone(), base).is_some() {
            return Err(err(format!("duplicate base id {}", cols[0].trim())));
        }
    }
    Ok(out)
}

pub fn read_candidates_file<T: Scalar>(path: &Path) -> Result<Vec<CandidateRewrite<T>>, RewardError> {
    let content = std::fs::read_to_string(path).map_err(|e| RewardError::Io(format!("{}: {e}", path.display())))?;
    parse_candidates(&content).map_err(|e| with_file(e, path))
}

pub fn read_bases_file(path: &Path) -> Result<BTreeMap<String, BaseUtterance>, RewardError> {
    let content = std::fs::read_to_string(path).map_err(|e| RewardError::Io(format!("{}: {e}", path.display())))?;
    parse_bases(&content).map_err(|e| with_file(e, path))
}

fn with_file(e: RewardError, path: &Path) -> RewardError {
    match e {
        RewardError::Format { line, message, .. } => RewardError::Format {
            file: path.display().to_string(),
            line,
            message,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cand(id: &str, base: &str, text: &str, ppl: f64, sem: f64, emp: f64) -> CandidateRewrite<f64> {
        CandidateRewrite {
            candidate_id: id.into(),
            base_id: base.into(),
            text: text.into(),
            perplexity: ppl,
            semantic_logit: sem,
            empathy_logit: emp,
            embedding_ref: text.into(),
        }
    }

    #[test]
    fn repetition_penalty_cases() {
        assert_eq!(repetition_penalty("one two three", 1.0), 0.0);
        assert_eq!(repetition_penalty("a a a b", 1.0), 2.0);
        assert_eq!(repetition_penalty("a a a b", 2.0), 4.0);
        assert_eq!(repetition_penalty("خیلی خیلی ممنون", 1.0), 1.0);
    }

    #[test]
    fn fluency_cases() {
        assert_eq!(fluency_reward(5.0, "x x", 1.0).unwrap(), 0.25);
        assert_eq!(fluency_reward(2.0, "p q r", 1.0).unwrap(), 0.5);
        assert!(matches!(fluency_reward(1.0, "x x", 1.0), Err(RewardError::DegenerateFluency { .. })));
        assert!(fluency_reward(1.0, "x x", 1.0).unwrap_err().to_string().starts_with("degenerate fluency denominator"));
        assert_eq!(fluency_reward(1.0, "  ", 1.0), Err(RewardError::EmptyText));
    }

    #[test]
    fn minmax_cases() {
        assert_eq!(minmax_normalize(&[1.0, 2.0, 3.0]).unwrap(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(minmax_normalize(&[5.0, 5.0, 5.0]).unwrap(), vec![0.0, 0.0, 0.0]);
        assert_eq!(minmax_normalize(&[1.0]), Err(RewardError::BatchTooSmall));
        assert_eq!(RewardError::BatchTooSmall.to_string(), "batch too small to normalize");
    }

    #[test]
    fn kl_cases() {
        let p = PolicyDistribution::new(vec![1.0, 0.0]).unwrap();
        let q = PolicyDistribution::new(vec![0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(kl_divergence(&p, &q).unwrap(), std::f64::consts::LN_2, epsilon = 1e-12);
        assert_eq!(kl_divergence(&q, &q).unwrap(), 0.0);
        assert_eq!(kl_divergence(&q, &p), Err(RewardError::AbsoluteContinuity(1)));
        let r = PolicyDistribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(kl_divergence(&p, &r), Err(RewardError::SupportMismatch(2, 3)));
        assert!(PolicyDistribution::new(vec![0.6, 0.6]).is_err());
        assert!(PolicyDistribution::new(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn two_candidate_batch_hits_endpoints() {
        let store = EmbeddingStore::<f64>::fallback(64);
        let base = store.embed("we are here to help you").unwrap();
        let good = cand("g", "b", "we are here to help you", 2.0, 3.0, 3.0);
        let bad = cand("x", "b", "unrelated words entirely", 8.0, -1.0, 0.0);
        let s = score_batch(&[good, bad], &base, Weights::default(), 1.0, &store).unwrap();
        assert_eq!(s.scored[0].reward.composite, 4.0);
        assert_eq!(s.scored[1].reward.composite, -4.0);
    }

    #[test]
    fn rejected_candidates_do_not_fail_the_batch() {
        let store = EmbeddingStore::<f64>::fallback(64);
        let base = store.embed("hello").unwrap();
        let batch = [
            cand("a", "b", "hello there", 3.0, 0.0, 0.0),
            cand("b", "b", "go go go", 2.0, 0.0, 0.0),
            cand("c", "b", "hello friend", 4.0, 1.0, 1.0),
        ];
        let s = score_batch(&batch, &base, Weights::default(), 1.0, &store).unwrap();
        assert_eq!(s.scored.len(), 2);
        assert_eq!(s.rejected[0].0, "b");
        assert!(matches!(
            composite_reward(&batch[1], &base, Weights::default(), &batch, 1.0, &store),
            Err(RewardError::DegenerateFluency { .. })
        ));
    }

    fn bases() -> BTreeMap<String, BaseUtterance> {
        parse_bases("b1\tgreeting\tFormal\tسلام وقت بخیر\nb2\tgreeting\tFriendly\tسلام رفیق\n").unwrap()
    }

    #[test]
    fn build_pool_truncates_and_orders() {
        let store = EmbeddingStore::<f64>::fallback(64);
        let cands = vec![
            cand("c3", "b1", "سلام وقت بخیر", 2.0, 1.0, 1.0),
            cand("c1", "b1", "درود", 9.0, 0.0, 0.0),
            cand("c2", "b1", "سلام بخیر", 3.0, 0.5, 0.5),
            cand("d1", "b2", "سلام رفیق جان", 3.0, 0.0, 0.0),
        ];
        let all = build_pool(&cands, &bases(), Weights::default(), 10, 1.0, &store).unwrap();
        let ids: Vec<&str> = all.entries.iter().map(|e| e.candidate.candidate_id.as_str()).collect();
        assert_eq!(ids, ["c3", "c2", "c1", "d1"]);
        assert!(all.entries[3].reward.is_none());
        assert_eq!(all.diagnostics.len(), 1);

        let top = build_pool(&cands, &bases(), Weights::default(), 1, 1.0, &store).unwrap();
        let ids: Vec<&str> = top.entries.iter().map(|e| e.candidate.candidate_id.as_str()).collect();
        assert_eq!(ids, ["c3", "d1"]);
        let utts = top.utterances(&bases());
        assert_eq!(utts[1].formality, Formality::Friendly);
        assert_eq!(utts[0].composite_reward, Some(4.0));
        assert!(top.render_scores().lines().nth(1).unwrap().starts_with("b1\t1\tc3\t1.000000"));
    }

    #[test]
    fn build_pool_ties_break_on_candidate_id() {
        let store = EmbeddingStore::<f64>::fallback(64);
        let cands = vec![
            cand("z", "b1", "سلام", 2.0, 1.0, 1.0),
            cand("a", "b1", "سلام", 2.0, 1.0, 1.0),
            cand("m", "b1", "سلام", 2.0, 1.0, 1.0),
        ];
        let p = build_pool(&cands, &bases(), Weights::default(), 2, 1.0, &store).unwrap();
        let ids: Vec<&str> = p.entries.iter().map(|e| e.candidate.candidate_id.as_str()).collect();
        assert_eq!(ids, ["a", "m"]);
    }

    #[test]
    fn unknown_base_is_an_error() {
        let store = EmbeddingStore::<f64>::fallback(8);
        let cands = vec![cand("a", "nope", "x", 2.0, 0.0, 0.0)];
        assert_eq!(
            build_pool(&cands, &bases(), Weights::default(), 1, 1.0, &store),
            Err(RewardError::UnknownBase("nope".into()))
        );
    }

    #[test]
    fn candidate_file_parsing() {
        let c: Vec<CandidateRewrite<f64>> = parse_candidates("# h\nc1\tb1\tسلام\t4.5\t0.1\t-0.2\n").unwrap();
        assert_eq!(c[0].perplexity, 4.5);
        assert_eq!(c[0].embedding_ref, "سلام");
        assert!(matches!(parse_candidates::<f64>("c1\tb1\tx\t0\t0\t0\n"), Err(RewardError::Format { line: 1, .. })));
        assert!(matches!(parse_candidates::<f64>("c1\tb1\tx\t1\n"), Err(RewardError::Format { .. })));
    }

    #[test]
    fn weights_parse() {
        let w: Weights<f64> = Weights::parse("1, 0.5,0,2").unwrap();
        assert_eq!((w.fluency, w.semantic, w.empathy, w.similarity), (1.0, 0.5, 0.0, 2.0));
        assert!(Weights::<f64>::parse("1,2,3").is_err());
        assert!(Weights::<f64>::parse("1,2,x,3").is_err());
    }

    #[test]
    fn works_in_f32() {
        assert_eq!(minmax_normalize(&[1.0f32, 2.0, 3.0]).unwrap(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(fluency_reward(5.0f32, "a a", 1.0).unwrap(), 0.25);
    }

    fn batch_strategy() -> impl Strategy<Value = Vec<(f64, f64, f64, usize)>> {
        prop::collection::vec((1.5f64..50.0, -5.0f64..5.0, -5.0f64..5.0, 0usize..6), 2..8)
    }

    const WORDS: [&str; 6] = ["ما", "کنار", "شما", "هستیم", "آرام", "باشید"];

    fn make_batch(spec: &[(f64, f64, f64, usize)]) -> Vec<CandidateRewrite<f64>> {
        spec.iter()
            .enumerate()
            .map(|(i, &(ppl, s, e, k))| {
                let text = WORDS[..=k].join(" ");
                cand(&format!("c{i}"), "b", &text, ppl, s, e)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn normalized_components_are_bounded(spec in batch_strategy()) {
            let store = EmbeddingStore::<f64>::fallback(64);
            let base = store.embed("ما کنار شما هستیم").unwrap();
            let s = score_batch(&make_batch(&spec), &base, Weights::default(), 1.0, &store).unwrap();
            for c in &s.scored {
                let r = c.reward;
                for x in [r.fluency, r.semantic, r.empathy, r.similarity] {
                    prop_assert!((-1.0..=1.0).contains(&x));
                }
                prop_assert_eq!(r.composite, r.fluency + r.semantic + r.empathy + r.similarity);
            }
        }

        #[test]
        fn batch_order_does_not_matter(spec in batch_strategy(), rot in 0usize..8) {
            let store = EmbeddingStore::<f64>::fallback(64);
            let base = store.embed("آرام باشید").unwrap();
            let batch = make_batch(&spec);
            let mut rotated = batch.clone();
            let n = rotated.len();
            rotated.rotate_left(rot % n);
            let a = score_batch(&batch, &base, Weights::default(), 1.0, &store).unwrap();
            let b = score_batch(&rotated, &base, Weights::default(), 1.0, &store).unwrap();
            for x in &a.scored {
                let y = b.scored.iter().find(|y| y.candidate.candidate_id == x.candidate.candidate_id).unwrap();
                prop_assert_eq!(x.reward.composite, y.reward.composite);
            }
        }

        #[test]
        fn weight_scaling_is_linear(spec in batch_strategy(), lambda in -3.0f64..3.0) {
            let store = EmbeddingStore::<f64>::fallback(64);
            let base = store.embed("شما").unwrap();
            let batch = make_batch(&spec);
            let w = Weights::default();
            let scaled = Weights { empathy: lambda, ..w };
            let a = score_batch(&batch, &base, w, 1.0, &store).unwrap();
            let b = score_batch(&batch, &base, scaled, 1.0, &store).unwrap();
            for (x, y) in a.scored.iter().zip(&b.scored) {
                let expected = x.reward.composite + (lambda - 1.0) * x.reward.empathy;
                prop_assert!((y.reward.composite - expected).abs() < 1e-12);
            }
        }

        #[test]
        fn normalization_is_idempotent_on_normalized(mut xs in prop::collection::vec(-1.0f64..1.0, 0..10)) {
            xs.push(-1.0);
            xs.push(1.0);
            let ys = minmax_normalize(&xs).unwrap();
            for (x, y) in xs.iter().zip(&ys) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn kl_is_non_negative(raw in prop::collection::vec((0.0f64..1.0, 0.01f64..1.0), 1..10)) {
            let sp: f64 = raw.iter().map(|r| r.0).sum();
            prop_assume!(sp > 0.0);
            let sq: f64 = raw.iter().map(|r| r.1).sum();
            let p = PolicyDistribution::new(raw.iter().map(|r| r.0 / sp).collect()).unwrap();
            let q = PolicyDistribution::new(raw.iter().map(|r| r.1 / sq).collect()).unwrap();
            prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
            prop_assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
        }
    }
}
