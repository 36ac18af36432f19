//! Domain types shared by the engine, the service and the CLI.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowGraph;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("unknown emotion label {0:?}")]
    UnknownEmotion(String),
    #[error("unknown formality {0:?}")]
    UnknownFormality(String),
    #[error("turn text is empty")]
    EmptyTurn,
}

/// The twelve emotion classes the comprehension layer distinguishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EmotionLabel {
    Happy,
    Angry,
    Anxious,
    Ashamed,
    Disappointed,
    Disgusted,
    Envious,
    Guilty,
    Insecure,
    Loving,
    Sad,
    Jealous,
}

impl EmotionLabel {
    /// Every label, in report order.
    pub const ALL: [EmotionLabel; 12] = [
        EmotionLabel::Happy,
        EmotionLabel::Angry,
        EmotionLabel::Anxious,
        EmotionLabel::Ashamed,
        EmotionLabel::Disappointed,
        EmotionLabel::Disgusted,
        EmotionLabel::Envious,
        EmotionLabel::Guilty,
        EmotionLabel::Insecure,
        EmotionLabel::Loving,
        EmotionLabel::Sad,
        EmotionLabel::Jealous,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Happy => "Happy",
            EmotionLabel::Angry => "Angry",
            EmotionLabel::Anxious => "Anxious",
            EmotionLabel::Ashamed => "Ashamed",
            EmotionLabel::Disappointed => "Disappointed",
            EmotionLabel::Disgusted => "Disgusted",
            EmotionLabel::Envious => "Envious",
            EmotionLabel::Guilty => "Guilty",
            EmotionLabel::Insecure => "Insecure",
            EmotionLabel::Loving => "Loving",
            EmotionLabel::Sad => "Sad",
            EmotionLabel::Jealous => "Jealous",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmotionLabel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EmotionLabel::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| ModelError::UnknownEmotion(s.to_owned()))
    }
}

/// Register of the bot's replies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Formality {
    Formal,
    Friendly,
}

impl Formality {
    pub fn as_str(self) -> &'static str {
        match self {
            Formality::Formal => "Formal",
            Formality::Friendly => "Friendly",
        }
    }
}

impl fmt::Display for Formality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Formality {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Formal" | "formal" => Ok(Formality::Formal),
            "Friendly" | "friendly" => Ok(Formality::Friendly),
            other => Err(ModelError::UnknownFormality(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Speaker {
    User,
    Bot,
}

/// One utterance in a session transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    pub node_id: String,
    /// Milliseconds since the Unix epoch, informational only.
    pub timestamp: u64,
    /// Key under which this turn's embedding is cached.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_ref: Option<String>,
    /// Pool entry a bot turn was realized from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utterance_id: Option<String>,
}

impl Turn {
    pub fn new(speaker: Speaker, text: impl Into<String>, node_id: impl Into<String>) -> Result<Self, ModelError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ModelError::EmptyTurn);
        }
        Ok(Turn {
            speaker,
            embedding_ref: Some(text.clone()),
            text,
            node_id: node_id.into(),
            timestamp: now_millis(),
            utterance_id: None,
        })
    }

    pub fn with_utterance_id(mut self, id: impl Into<String>) -> Self {
        self.utterance_id = Some(id.into());
        self
    }
}

pub fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Fresh 128-bit session identifier in lowercase hex.
pub fn new_session_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

/// One user's conversation state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub current_node: String,
    pub formality: Option<Formality>,
    pub user_name: Option<String>,
    pub history: Vec<Turn>,
    pub detected_emotion: Option<EmotionLabel>,
    pub rng_seed: u64,
    /// Number of engine steps taken so far; selects the random stream of the next step.
    pub steps: u64,
    /// Consecutive clarification requests issued at `current_node`.
    pub clarify_attempts: u32,
    /// Every node entered so far, starting with the start node.
    pub path: Vec<String>,
    /// Pool entries already spoken in this session.
    pub used_utterances: BTreeSet<String>,
}

impl Session {
    /// Appends a turn, keeping timestamps non-decreasing.
    pub fn push_turn(&mut self, mut turn: Turn) {
        if let Some(last) = self.history.last() {
            turn.timestamp = turn.timestamp.max(last.timestamp);
        }
        if let Some(id) = &turn.utterance_id {
            self.used_utterances.insert(id.clone());
        }
        self.history.push(turn);
    }

    /// Current register; unset formality speaks formally.
    pub fn register(&self) -> Formality {
        self.formality.unwrap_or(Formality::Formal)
    }
}

/// Creates a session positioned at the graph's start node.
pub fn new_session(seed: u64, graph: &FlowGraph) -> Session {
    new_session_with_id(new_session_id(), seed, graph)
}

pub fn new_session_with_id(session_id: String, seed: u64, graph: &FlowGraph) -> Session {
    Session {
        session_id,
        current_node: graph.start.clone(),
        formality: None,
        user_name: None,
        history: Vec::new(),
        detected_emotion: None,
        rng_seed: seed,
        steps: 0,
        clarify_attempts: 0,
        path: vec![graph.start.clone()],
        used_utterances: BTreeSet::new(),
    }
}
