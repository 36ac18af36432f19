//! Choosing the bot's next line from a `(node, formality)` pool.
//!
//! The first line of a conversation is drawn uniformly. Afterwards, with
//! probability `randomness` a line is drawn uniformly from the whole pool;
//! otherwise the line whose embedding is closest (cosine) to the mean
//! embedding of the recent history wins. Lines already spoken in the session
//! are left out of the coherent choice while unused ones remain.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, mean, EmbeddingError, EmbeddingStore, EmbeddingVector};
use crate::model::{Formality, Session, Speaker, Turn};
use crate::scalar::Scalar;

pub const NAME_PLACEHOLDER: &str = "{name}";

/// Pool node id holding clarification requests.
pub const CLARIFY_NODE: &str = "_clarify";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectorError {
    #[error("empty pool for node {0}")]
    EmptyPool(String),
    #[error("name required: utterance {0} addresses the user but no name is stored")]
    NameRequired(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("pool file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("invalid pool: {0}")]
    Invalid(String),
    #[error("invalid selector config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

/// One candidate bot line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub utterance_id: String,
    pub node_id: String,
    pub formality: Formality,
    pub text: String,
    /// Store key of this line's embedding; equals `text` unless precomputed under an id.
    pub embedding_ref: String,
    /// Composite rewrite score the line was admitted with, when scored.
    #[serde(default)]
    pub composite_reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtterancePool {
    pub node_id: String,
    pub formality: Formality,
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistorySpeakers {
    #[default]
    Both,
    BotOnly,
    UserOnly,
}

impl HistorySpeakers {
    fn admits(self, speaker: Speaker) -> bool {
        match self {
            HistorySpeakers::Both => true,
            HistorySpeakers::BotOnly => speaker == Speaker::Bot,
            HistorySpeakers::UserOnly => speaker == Speaker::User,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    /// Probability of a uniform draw instead of the coherent choice.
    pub randomness: f64,
    /// Number of most recent turns averaged.
    pub history_window: usize,
    pub history_speakers: HistorySpeakers,
    /// Replacement for `{name}`; its own `{name}` is the stored user name.
    pub name_template: String,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            randomness: 0.25,
            history_window: 6,
            history_speakers: HistorySpeakers::Both,
            name_template: NAME_PLACEHOLDER.to_owned(),
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<(), SelectorError> {
        if !(0.0..=1.0).contains(&self.randomness) {
            return Err(SelectorError::Config(format!("randomness {} outside [0, 1]", self.randomness)));
        }
        if self.history_window == 0 {
            return Err(SelectorError::Config("history_window must be at least 1".into()));
        }
        Ok(())
    }
}

fn recent_turns<'a>(history: &'a [Turn], cfg: &SelectorConfig) -> Vec<&'a Turn> {
    let mut picked: Vec<&Turn> = history
        .iter()
        .rev()
        .filter(|t| cfg.history_speakers.admits(t.speaker))
        .take(cfg.history_window)
        .collect();
    picked.reverse();
    picked
}

/// Mean embedding of the turns the coherent choice compares against.
pub fn history_mean<T: Scalar>(
    session: &Session,
    cfg: &SelectorConfig,
    store: &EmbeddingStore<T>,
) -> Result<Option<EmbeddingVector<T>>, SelectorError> {
    let turns = recent_turns(&session.history, cfg);
    if turns.is_empty() {
        return Ok(None);
    }
    let vectors = turns
        .iter()
        .map(|t| store.embed(t.embedding_ref.as_deref().unwrap_or(&t.text)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(mean(&vectors)?))
}

/// Picks the next line from `pool`.
pub fn select<'p, T: Scalar, R: Rng + ?Sized>(
    pool: &'p UtterancePool,
    session: &Session,
    cfg: &SelectorConfig,
    store: &EmbeddingStore<T>,
    rng: &mut R,
) -> Result<&'p Utterance, SelectorError> {
    let n = pool.utterances.len();
    if n == 0 {
        return Err(SelectorError::EmptyPool(pool.node_id.clone()));
    }
    if session.history.is_empty() {
        return Ok(&pool.utterances[rng.random_range(0..n)]);
    }
    let draw: f64 = rng.random();
    if draw < cfg.randomness {
        return Ok(&pool.utterances[rng.random_range(0..n)]);
    }
    let Some(context) = history_mean(session, cfg, store)? else {
        return Ok(&pool.utterances[rng.random_range(0..n)]);
    };

    let fresh: Vec<&Utterance> = pool
        .utterances
        .iter()
        .filter(|u| !session.used_utterances.contains(&u.utterance_id))
        .collect();
    let candidates: Vec<&Utterance> = if fresh.is_empty() {
        pool.utterances.iter().collect()
    } else {
        fresh
    };

    let mut best: Option<(&Utterance, T)> = None;
    for u in candidates {
        let score = cosine(&store.embed(&u.embedding_ref)?, &context)?;
        let better = match best {
            None => true,
            Some((b, s)) => score > s || (score == s && u.utterance_id < b.utterance_id),
        };
        if better {
            best = Some((u, score));
        }
    }
    Ok(best.expect("candidates non-empty").0)
}

/// Fills the `{name}` placeholder with the stored user name.
pub fn realize(utterance: &Utterance, session: &Session, cfg: &SelectorConfig) -> Result<String, SelectorError> {
    if !utterance.text.contains(NAME_PLACEHOLDER) {
        return Ok(utterance.text.clone());
    }
    let name = session
        .user_name
        .as_deref()
        .ok_or_else(|| SelectorError::NameRequired(utterance.utterance_id.clone()))?;
    let addressed = cfg.name_template.replace(NAME_PLACEHOLDER, name);
    Ok(utterance.text.replace(NAME_PLACEHOLDER, &addressed))
}

/// All pools of a deployment, keyed by `(node_id, formality)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoolSet {
    pools: BTreeMap<(String, Formality), UtterancePool>,
}

impl PoolSet {
    pub fn from_utterances(utterances: Vec<Utterance>) -> Result<Self, SelectorError> {
        let mut pools: BTreeMap<(String, Formality), UtterancePool> = BTreeMap::new();
        let mut ids = std::collections::HashSet::new();
        for u in utterances {
            if !ids.insert(u.utterance_id.clone()) {
                return Err(SelectorError::Invalid(format!("duplicate utterance id {}", u.utterance_id)));
            }
            if u.text.contains(NAME_PLACEHOLDER) && u.formality != Formality::Friendly {
                return Err(SelectorError::Invalid(format!(
                    "utterance {} uses {NAME_PLACEHOLDER} in a formal pool",
                    u.utterance_id
                )));
            }
            pools
                .entry((u.node_id.clone(), u.formality))
                .or_insert_with(|| UtterancePool {
                    node_id: u.node_id.clone(),
                    formality: u.formality,
                    utterances: Vec::new(),
                })
                .utterances
                .push(u);
        }
        Ok(PoolSet { pools })
    }

    pub fn get(&self, node_id: &str, formality: Formality) -> Option<&UtterancePool> {
        self.pools.get(&(node_id.to_owned(), formality))
    }

    pub fn iter(&self) -> impl Iterator<Item = &UtterancePool> {
        self.pools.values()
    }

    pub fn utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.pools.values().flat_map(|p| p.utterances.iter())
    }

    pub fn parse(content: &str) -> Result<Self, SelectorError> {
        Self::from_utterances(parse_pool_records(content)?)
    }

    pub fn load_file(path: &Path) -> Result<Self, SelectorError> {
        let content =
            std::fs::read_to_string(path).map_err(|e| SelectorError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&content)
    }
}

/// Parses pool records: `utterance_id, node_id, formality, text,
/// embedding_ref[, composite_reward]`, tab-separated. An `embedding_ref` of
/// `-` or empty means the text itself.
pub fn parse_pool_records(content: &str) -> Result<Vec<Utterance>, SelectorError> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| SelectorError::Format { line: i + 1, message };
        let cols: Vec<&str> = line.split('\t').collect();
        if !(5..=6).contains(&cols.len()) {
            return Err(err(format!("expected 5 or 6 tab-separated columns, found {}", cols.len())));
        }
        let formality: Formality = cols[2].parse().map_err(|e: crate::model::ModelError| err(e.to_string()))?;
        let text = cols[3].trim();
        if cols[0].trim().is_empty() || cols[1].trim().is_empty() || text.is_empty() {
            return Err(err("empty id, node or text".into()));
        }
        let embedding_ref = match cols[4].trim() {
            "" | "-" => text.to_owned(),
            r => r.to_owned(),
        };
        let composite_reward = match cols.get(5).map(|s| s.trim()) {
            None | Some("") | Some("-") => None,
            Some(v) => Some(v.parse::<f64>().map_err(|_| err(format!("bad reward {v:?}")))?),
        };
        out.push(Utterance {
            utterance_id: cols[0].trim().to_owned(),
            node_id: cols[1].trim().to_owned(),
            formality,
            text: text.to_owned(),
            embedding_ref,
            composite_reward,
        });
    }
    Ok(out)
}

/// Inverse of [`parse_pool_records`].
pub fn render_pool_records(utterances: &[Utterance]) -> String {
    let mut out = String::from("# utterance_id\tnode_id\tformality\ttext\tembedding_ref\tcomposite_reward\n");
    for u in utterances {
        let r = if u.embedding_ref == u.text { "-" } else { &u.embedding_ref };
        let reward = u.composite_reward.map(|x| format!("{x:.12}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            u.utterance_id, u.node_id, u.formality, u.text, r, reward
        );
    }
    out
}
