//! FAQ retrieval over a question/answer knowledge base, and the paraphrase
//! validator that measures it.
//!
//! Every entry stores a primary question and two analogous phrasings. A
//! user question is embedded and compared by cosine against every stored
//! phrasing; the entry owning the best-scoring phrasing answers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, EmbeddingError, EmbeddingStore, EmbeddingVector};
use crate::scalar::Scalar;
use crate::text::normalize;

pub const ANALOGOUS_PER_ENTRY: usize = 2;
pub const DEFAULT_VARIANTS: usize = 4;
pub const DEFAULT_MAX_SUBSTITUTIONS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TeacherError {
    #[error("empty question")]
    EmptyQuestion,
    #[error("empty knowledge base")]
    EmptyKnowledgeBase,
    #[error("no confident answer (best score {best:.3} below floor {floor:.3})")]
    NoConfidentAnswer { best: f64, floor: f64 },
    #[error("invalid entry {qa_id}: {message}")]
    InvalidEntry { qa_id: String, message: String },
    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaEntry {
    pub qa_id: String,
    pub primary_question: String,
    pub analogous_questions: Vec<String>,
    pub answer: String,
    /// Store keys, one per question variant (primary first); defaults to the texts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub embedding_refs: Vec<String>,
}

impl QaEntry {
    pub fn validate(&self) -> Result<(), TeacherError> {
        let bad = |message: &str| TeacherError::InvalidEntry {
            qa_id: self.qa_id.clone(),
            message: message.to_owned(),
        };
        if self.qa_id.trim().is_empty() {
            return Err(bad("empty qa_id"));
        }
        if self.analogous_questions.len() != ANALOGOUS_PER_ENTRY {
            return Err(bad("exactly 2 analogous questions required"));
        }
        if self.questions().any(|q| q.trim().is_empty()) {
            return Err(bad("empty question"));
        }
        if self.answer.trim().is_empty() {
            return Err(bad("empty answer"));
        }
        if !self.embedding_refs.is_empty() && self.embedding_refs.len() != 1 + ANALOGOUS_PER_ENTRY {
            return Err(bad("embedding_refs must list one key per question"));
        }
        Ok(())
    }

    /// Primary question, then the analogous ones.
    pub fn questions(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.primary_question.as_str()).chain(self.analogous_questions.iter().map(String::as_str))
    }

    fn embedding_ref(&self, i: usize, question: &str) -> String {
        self.embedding_refs.get(i).cloned().unwrap_or_else(|| question.to_owned())
    }
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct QaFile {
    #[serde(rename = "entry", default)]
    entries: Vec<QaEntry>,
}

/// Parses the QA file: a TOML document of `[[entry]]` tables.
pub fn parse_qa(content: &str) -> Result<Vec<QaEntry>, TeacherError> {
    let file: QaFile = toml::from_str(content).map_err(|e| TeacherError::Parse(e.to_string()))?;
    let mut ids = BTreeSet::new();
    for e in &file.entries {
        e.validate()?;
        if !ids.insert(e.qa_id.clone()) {
            return Err(TeacherError::InvalidEntry {
                qa_id: e.qa_id.clone(),
                message: "duplicate qa_id".into(),
            });
        }
    }
    Ok(file.entries)
}

pub fn render_qa(entries: &[QaEntry]) -> String {
    toml::to_string(&QaFile {
        entries: entries.to_vec(),
    })
    .expect("QA entries serialize")
}

pub fn read_qa_file(path: &Path) -> Result<Vec<QaEntry>, TeacherError> {
    let content = std::fs::read_to_string(path).map_err(|e| TeacherError::Io(format!("{}: {e}", path.display())))?;
    parse_qa(&content).map_err(|e| match e {
        TeacherError::Parse(m) => TeacherError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Answer {
    pub answer: String,
    pub qa_id: String,
    pub score: f64,
    pub matched_variant: String,
}

struct Variant<T> {
    entry: usize,
    text: String,
    embedding: EmbeddingVector<T>,
}

/// Immutable knowledge base with every question variant embedded up front.
pub struct KnowledgeBase<T: Scalar> {
    entries: Vec<QaEntry>,
    variants: Vec<Variant<T>>,
    store: Arc<EmbeddingStore<T>>,
    confidence_floor: f64,
}

impl<T: Scalar> std::fmt::Debug for KnowledgeBase<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KnowledgeBase")
            .field("entries", &self.entries.len())
            .field("variants", &self.variants.len())
            .field("confidence_floor", &self.confidence_floor)
            .finish()
    }
}

impl<T: Scalar> KnowledgeBase<T> {
    pub fn new(entries: Vec<QaEntry>, store: Arc<EmbeddingStore<T>>) -> Result<Self, TeacherError> {
        if entries.is_empty() {
            return Err(TeacherError::EmptyKnowledgeBase);
        }
        let mut variants = Vec::new();
        for (idx, e) in entries.iter().enumerate() {
            e.validate()?;
            for (i, q) in e.questions().enumerate() {
                variants.push(Variant {
                    entry: idx,
                    text: q.to_owned(),
                    embedding: store.embed(&e.embedding_ref(i, q))?,
                });
            }
        }
        Ok(KnowledgeBase {
            entries,
            variants,
            store,
            confidence_floor: 0.0,
        })
    }

    /// Scores below `floor` yield [`TeacherError::NoConfidentAnswer`]; 0 disables.
    pub fn with_confidence_floor(mut self, floor: f64) -> Self {
        self.confidence_floor = floor;
        self
    }

    pub fn entries(&self) -> &[QaEntry] {
        &self.entries
    }

    pub fn answer(&self, question: &str) -> Result<Answer, TeacherError> {
        if question.trim().is_empty() {
            return Err(TeacherError::EmptyQuestion);
        }
        let q = self.store.embed(question)?;
        let mut best: Option<(&Variant<T>, T)> = None;
        for v in &self.variants {
            let score = cosine(&q, &v.embedding)?;
            let better = match best {
                None => true,
                Some((b, s)) => {
                    score > s || (score == s && self.entries[v.entry].qa_id < self.entries[b.entry].qa_id)
                }
            };
            if better {
                best = Some((v, score));
            }
        }
        let (v, score) = best.expect("knowledge base is non-empty");
        let score = score.to_f64_lossy();
        if self.confidence_floor > 0.0 && score < self.confidence_floor {
            return Err(TeacherError::NoConfidentAnswer {
                best: score,
                floor: self.confidence_floor,
            });
        }
        let entry = &self.entries[v.entry];
        Ok(Answer {
            answer: entry.answer.clone(),
            qa_id: entry.qa_id.clone(),
            score,
            matched_variant: v.text.clone(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationRecipe {
    pub starter_phrases: Vec<String>,
    pub ender_phrases: Vec<String>,
    /// Keys are matched against normalized tokens.
    pub synonym_map: BTreeMap<String, Vec<String>>,
}

impl AugmentationRecipe {
    /// Leaves questions verbatim.
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn is_identity(&self) -> bool {
        self.starter_phrases.is_empty() && self.ender_phrases.is_empty() && self.synonym_map.is_empty()
    }

    /// Rejects blank phrases and empty synonym lists. An entirely empty
    /// recipe is accepted only through [`AugmentationRecipe::identity`]
    /// semantics and is reported by `is_identity`.
    pub fn validate(&self) -> Result<(), TeacherError> {
        if self.starter_phrases.iter().chain(&self.ender_phrases).any(|p| p.trim().is_empty()) {
            return Err(TeacherError::InvalidRecipe("blank starter or ender phrase".into()));
        }
        for (k, v) in &self.synonym_map {
            if v.is_empty() || v.iter().any(|s| s.trim().is_empty()) {
                return Err(TeacherError::InvalidRecipe(format!("synonym list for {k:?} is empty or blank")));
            }
        }
        Ok(())
    }

    pub fn parse(content: &str) -> Result<Self, TeacherError> {
        let r: Self = toml::from_str(content).map_err(|e| TeacherError::Parse(e.to_string()))?;
        let normalized = r
            .synonym_map
            .into_iter()
            .map(|(k, v)| (normalize(&k), v))
            .collect();
        let r = AugmentationRecipe {
            synonym_map: normalized,
            ..r
        };
        r.validate()?;
        Ok(r)
    }

    pub fn load_file(path: &Path) -> Result<Self, TeacherError> {
        let content = std::fs::read_to_string(path).map_err(|e| TeacherError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&content)
    }
}

/// Paraphrases of `entry`'s primary question: a sampled starter (when the
/// recipe has any), up to `max_substitutions` synonym swaps, and a sampled
/// ender (when the recipe has any). Distinct variants only; fewer than
/// `count` when the recipe cannot produce more.
///
/// The identity recipe yields the entry's stored questions verbatim.
pub fn augment<R: Rng + ?Sized>(
    entry: &QaEntry,
    recipe: &AugmentationRecipe,
    count: usize,
    max_substitutions: usize,
    rng: &mut R,
) -> Vec<String> {
    if recipe.is_identity() {
        let mut seen = BTreeSet::new();
        return entry
            .questions()
            .filter(|q| seen.insert(*q))
            .take(count)
            .map(str::to_owned)
            .collect();
    }
    let words: Vec<&str> = entry.primary_question.split_whitespace().collect();
    let swappable: Vec<(usize, &Vec<String>)> = words
        .iter()
        .enumerate()
        .filter_map(|(i, w)| recipe.synonym_map.get(&normalize(w)).map(|s| (i, s)))
        .collect();

    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let attempts = count.saturating_mul(25).max(25);
    for _ in 0..attempts {
        if out.len() >= count {
            break;
        }
        let mut body: Vec<String> = words.iter().map(|w| (*w).to_owned()).collect();
        let k = rng.random_range(0..=max_substitutions.min(swappable.len()));
        for &(pos, synonyms) in swappable.choose_multiple(rng, k) {
            body[pos] = synonyms.choose(rng).expect("validated non-empty").clone();
        }
        let mut parts = Vec::with_capacity(3);
        if let Some(s) = recipe.starter_phrases.choose(rng) {
            parts.push(s.trim().to_owned());
        }
        parts.push(body.join(" "));
        if let Some(e) = recipe.ender_phrases.choose(rng) {
            parts.push(e.trim().to_owned());
        }
        let variant = parts.join(" ");
        if seen.insert(variant.clone()) {
            out.push(variant);
        }
    }
    if out.len() < count {
        tracing::warn!(qa_id = %entry.qa_id, produced = out.len(), requested = count, "recipe exhausted");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Miss {
    pub qa_id: String,
    pub variant: String,
    pub predicted: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub total_variants: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub misses: Vec<Miss>,
}

impl ValidationReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "variants: {}\ncorrect: {}\naccuracy: {:.4}\n",
            self.total_variants, self.correct, self.accuracy
        );
        for m in &self.misses {
            out.push_str(&format!("miss\t{}\t{}\t{:.4}\t{}\n", m.qa_id, m.predicted, m.score, m.variant));
        }
        out
    }
}

/// Augments every entry and checks that each variant retrieves its source.
pub fn validate<T: Scalar, R: Rng + ?Sized>(
    kb: &KnowledgeBase<T>,
    recipe: &AugmentationRecipe,
    count: usize,
    max_substitutions: usize,
    rng: &mut R,
) -> Result<ValidationReport, TeacherError> {
    let mut total = 0;
    let mut correct = 0;
    let mut misses = Vec::new();
    for entry in kb.entries() {
        for variant in augment(entry, recipe, count, max_substitutions, rng) {
            total += 1;
            let got = kb.answer(&variant)?;
            if got.qa_id == entry.qa_id {
                correct += 1;
            } else {
                misses.push(Miss {
                    qa_id: entry.qa_id.clone(),
                    variant,
                    predicted: got.qa_id,
                    score: got.score,
                });
            }
        }
    }
    let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
    Ok(ValidationReport {
        total_variants: total,
        correct,
        accuracy,
        misses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn entry(id: &str, p: &str, a1: &str, a2: &str, ans: &str) -> QaEntry {
        QaEntry {
            qa_id: id.into(),
            primary_question: p.into(),
            analogous_questions: vec![a1.into(), a2.into()],
            answer: ans.into(),
            embedding_refs: vec![],
        }
    }

    fn kb(entries: Vec<QaEntry>) -> KnowledgeBase<f64> {
        KnowledgeBase::new(entries, Arc::new(EmbeddingStore::fallback(4096))).unwrap()
    }

    fn corpus() -> Vec<QaEntry> {
        vec![
            entry("q1", "what is self attachment", "define self attachment", "explain the technique", "A1"),
            entry("q2", "how long should I practice", "daily practice duration", "minutes per session", "A2"),
            entry("q3", "can children join", "is it for kids", "age limits", "A3"),
        ]
    }

    #[test]
    fn self_match_scores_one() {
        let k = kb(corpus());
        let a = k.answer("how long should I practice").unwrap();
        assert_eq!(a.qa_id, "q2");
        assert!((a.score - 1.0).abs() < 1e-9);
        assert_eq!(a.matched_variant, "how long should I practice");
    }

    #[test]
    fn analogous_variant_can_win() {
        let k = kb(corpus());
        let a = k.answer("kids").unwrap();
        assert_eq!((a.qa_id.as_str(), a.matched_variant.as_str()), ("q3", "is it for kids"));
    }

    #[test]
    fn singleton_always_answers() {
        let k = kb(vec![corpus().remove(0)]);
        assert_eq!(k.answer("zzz unrelated").unwrap().qa_id, "q1");
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let k = kb(vec![entry("b", "same", "x y", "z w", "B"), entry("a", "same", "p q", "r s", "A")]);
        assert_eq!(k.answer("same").unwrap().qa_id, "a");
    }

    #[test]
    fn confidence_floor() {
        let k = kb(corpus()).with_confidence_floor(0.9);
        assert!(matches!(k.answer("kids"), Err(TeacherError::NoConfidentAnswer { .. })));
        assert!(k.answer("can children join").is_ok());
    }

    #[test]
    fn entry_validation() {
        let mut e = corpus().remove(0);
        e.analogous_questions.pop();
        assert!(e.validate().is_err());
        let mut e = corpus().remove(0);
        e.answer = " ".into();
        assert!(e.validate().is_err());
        assert_eq!(KnowledgeBase::<f64>::new(vec![], Arc::new(EmbeddingStore::fallback(8))).unwrap_err(), TeacherError::EmptyKnowledgeBase);
        assert_eq!(kb(corpus()).answer(" "), Err(TeacherError::EmptyQuestion));
    }

    #[test]
    fn qa_file_round_trip() {
        let text = render_qa(&corpus());
        assert_eq!(parse_qa(&text).unwrap(), corpus());
        let dup = format!("{text}\n[[entry]]\nqa_id = \"q1\"\nprimary_question = \"a\"\nanalogous_questions = [\"b\", \"c\"]\nanswer = \"d\"\n");
        assert!(matches!(parse_qa(&dup), Err(TeacherError::InvalidEntry { .. })));
    }

    #[test]
    fn single_starter_recipe() {
        let recipe = AugmentationRecipe {
            starter_phrases: vec!["please tell me".into()],
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = augment(&corpus()[0], &recipe, 1, 2, &mut rng);
        assert_eq!(v, vec!["please tell me what is self attachment".to_string()]);
    }

    fn rich() -> AugmentationRecipe {
        AugmentationRecipe::parse(
            r#"
starter_phrases = ["hey", "quick question", "I wonder"]
ender_phrases = ["thanks", "please", "?"]
[synonym_map]
what = ["which"]
self = ["own"]
"#,
        )
        .unwrap()
    }

    #[test]
    fn rich_recipe_yields_distinct_and_deterministic() {
        let e = &corpus()[0];
        let a = augment(e, &rich(), 4, 2, &mut ChaCha8Rng::seed_from_u64(9));
        let b = augment(e, &rich(), 4, 2, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), 4);
    }

    #[test]
    fn identity_recipe_is_exact() {
        let k = kb(corpus());
        let r = validate(&k, &AugmentationRecipe::identity(), 4, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let questions = corpus().iter().map(|e| e.questions().count()).sum::<usize>();
        assert_eq!((r.total_variants, r.correct, r.accuracy), (questions, questions, 1.0));
        let one = augment(&corpus()[0], &AugmentationRecipe::identity(), 2, 2, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(one, corpus()[0].questions().take(2).collect::<Vec<_>>());
    }

    #[test]
    fn adversarial_recipe_reports_without_crashing() {
        let mut recipe = AugmentationRecipe::default();
        for w in "what is self attachment how long should I practice can children join".split(' ') {
            recipe.synonym_map.insert(normalize(w), vec!["blah".into(), "meh".into()]);
        }
        let r = validate(&kb(corpus()), &recipe, 4, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!((0.0..=1.0).contains(&r.accuracy));
        assert_eq!(r.correct + r.misses.len(), r.total_variants);
    }

    #[test]
    fn recipe_validation() {
        assert!(AugmentationRecipe::parse("starter_phrases = [\" \"]").is_err());
        assert!(AugmentationRecipe::parse("[synonym_map]\nx = []").is_err());
        assert!(AugmentationRecipe::parse("").unwrap().is_identity());
    }
}
