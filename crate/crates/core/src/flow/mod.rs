//! The conversation flowchart: loading, validation, stepping and exercise
//! recommendation.
//!
//! Graphs are TOML documents; see `docs/flow-graph.md` for the schema.

mod graph;
mod step;

use thiserror::Error;

pub use graph::{
    ComprehensionMode, Exercise, FlowGraph, FlowNode, NodeKind, DEFAULT_EDGE, MAX_EXERCISES,
};
pub use step::{
    greet, recommend, step, step_rng, BotLine, Comprehend, Comprehension, Respond, SessionDelta, StepOutcome,
    MAX_CLARIFY,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("cannot parse flow graph: {0}")]
    Parse(String),
    #[error("{0}")]
    Io(String),
    #[error("unknown node {target:?} (edge {from})")]
    UnknownNode { from: String, target: String },
    #[error("no terminal path from {0}")]
    NoTerminalPath(String),
    #[error("unknown exercise id {0:?}")]
    UnknownExercise(String),
    #[error("duplicate node {0:?}")]
    DuplicateNode(String),
    #[error("exercise catalog holds {0} exercises, at most 26 allowed")]
    TooManyExercises(usize),
    #[error("invalid flow graph: {0}")]
    Invalid(String),
    #[error("path does not end at a recommendation node ({0})")]
    NotRecommendation(String),
    #[error("conversation ended")]
    Ended,
    #[error("comprehension failed: {0}")]
    Comprehension(String),
    #[error("response selection failed: {0}")]
    Response(String),
    #[error("internal error: {0}")]
    Internal(String),
}
