use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{FlowGraph, FlowNode, NodeKind, DEFAULT_EDGE};
use super::FlowError;
use crate::model::{EmotionLabel, Formality, Session, Speaker, Turn};

/// Re-asks allowed at one node before its default edge is taken.
pub const MAX_CLARIFY: u32 = 2;

/// What comprehension extracted from one user input.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Comprehension {
    pub label: Option<String>,
    pub emotion: Option<EmotionLabel>,
    pub formality: Option<Formality>,
    pub name: Option<String>,
}

impl Comprehension {
    pub fn label(label: impl Into<String>) -> Self {
        Comprehension {
            label: Some(label.into()),
            ..Default::default()
        }
    }
}

/// Turns user input at a node into an outcome.
pub trait Comprehend {
    fn comprehend(&self, node: &FlowNode, input: &str, session: &Session) -> Result<Comprehension, FlowError>;
}

/// One bot line and the pool entry it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct BotLine {
    pub text: String,
    pub utterance_id: Option<String>,
}

/// Produces the bot's lines for a node.
pub trait Respond {
    /// Lines spoken on entering `node`, or when re-asking it if `clarify` is set.
    fn respond(
        &self,
        node: &FlowNode,
        clarify: bool,
        session: &Session,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<BotLine>, FlowError>;
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionDelta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub formality: Option<Formality>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user_name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub emotion: Option<EmotionLabel>,
}

impl SessionDelta {
    pub fn is_empty(&self) -> bool {
        self.formality.is_none() && self.user_name.is_none() && self.emotion.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub bot_utterances: Vec<String>,
    pub next_node: String,
    pub recommended_exercises: Vec<String>,
    pub session_delta: SessionDelta,
    /// Nodes entered during this step, in order. Empty when clarifying.
    pub entered: Vec<String>,
    /// Edges taken, as `(from, outcome label, to)`.
    pub transitions: Vec<(String, String, String)>,
    pub clarified: bool,
}

/// Random stream for a session's `step`-th engine call.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

fn record_bot_lines(session: &mut Session, node_id: &str, lines: &[BotLine]) -> Result<(), FlowError> {
    for line in lines {
        let mut turn = Turn::new(Speaker::Bot, line.text.clone(), node_id).map_err(|e| FlowError::Internal(e.to_string()))?;
        turn.utterance_id = line.utterance_id.clone();
        session.push_turn(turn);
    }
    Ok(())
}

/// Speaks the start node's lines for a fresh session.
pub fn greet<R: Respond>(session: &mut Session, graph: &FlowGraph, responder: &R) -> Result<Vec<String>, FlowError> {
    let node = graph
        .node(&session.current_node)
        .ok_or_else(|| FlowError::Internal(format!("unknown current node {}", session.current_node)))?;
    let mut rng = step_rng(session.rng_seed, session.steps);
    session.steps += 1;
    let lines = responder.respond(node, false, session, &mut rng)?;
    record_bot_lines(session, &node.node_id, &lines)?;
    Ok(lines.into_iter().map(|l| l.text).collect())
}

/// Advances the session by one user input.
pub fn step<C: Comprehend, R: Respond>(
    session: &mut Session,
    user_input: &str,
    graph: &FlowGraph,
    comprehender: &C,
    responder: &R,
) -> Result<StepOutcome, FlowError> {
    let node = graph
        .node(&session.current_node)
        .ok_or_else(|| FlowError::Internal(format!("unknown current node {}", session.current_node)))?;
    if node.kind == NodeKind::Terminal {
        return Err(FlowError::Ended);
    }

    let mut rng = step_rng(session.rng_seed, session.steps);
    session.steps += 1;

    if !user_input.trim().is_empty() {
        let turn = Turn::new(Speaker::User, user_input, &node.node_id).map_err(|e| FlowError::Internal(e.to_string()))?;
        session.push_turn(turn);
    }

    let comprehension = if node.kind.is_question() {
        comprehender.comprehend(node, user_input, session)?
    } else {
        Comprehension::default()
    };

    let routed = if node.kind.is_question() {
        match node.kind {
            NodeKind::NameQuestion => comprehension
                .name
                .as_ref()
                .and_then(|_| comprehension.label.as_deref().and_then(|l| node.target(l)).or(node.sole_target())),
            _ => comprehension.label.as_deref().and_then(|l| node.target(l)),
        }
    } else {
        node.sole_target()
    };

    let (target, taken) = match routed {
        Some(t) => (t.to_owned(), edge_key(node, comprehension.label.as_deref())),
        None => {
            let fallback = node.default_target().filter(|_| session.clarify_attempts >= MAX_CLARIFY);
            match fallback {
                Some(t) => (t.to_owned(), DEFAULT_EDGE.to_owned()),
                None => return clarify(session, node, responder, &mut rng),
            }
        }
    };

    let mut delta = SessionDelta::default();
    if routed.is_some() {
        if node.kind == NodeKind::FormalityQuestion {
            delta.formality = comprehension.formality;
        }
        if node.kind == NodeKind::EmotionQuestion {
            delta.emotion = comprehension.emotion;
        }
    }
    if let Some(f) = delta.formality {
        session.formality = Some(f);
    }
    if node.kind == NodeKind::NameQuestion && session.formality == Some(Formality::Friendly) {
        delta.user_name = comprehension.name.clone();
    }
    if let Some(name) = &delta.user_name {
        session.user_name = Some(name.clone());
    }
    if let Some(e) = delta.emotion {
        session.detected_emotion = Some(e);
    }

    let mut outcome = StepOutcome {
        bot_utterances: Vec::new(),
        next_node: target.clone(),
        recommended_exercises: Vec::new(),
        session_delta: delta,
        entered: Vec::new(),
        transitions: vec![(node.node_id.clone(), taken, target.clone())],
        clarified: false,
    };

    let mut current = target;
    for _ in 0..=graph.nodes.len() {
        let next = graph
            .node(&current)
            .ok_or_else(|| FlowError::Internal(format!("edge to unknown node {current}")))?;
        session.current_node = next.node_id.clone();
        session.clarify_attempts = 0;
        session.path.push(next.node_id.clone());
        outcome.entered.push(next.node_id.clone());

        let lines = responder.respond(next, false, session, &mut rng)?;
        record_bot_lines(session, &next.node_id, &lines)?;
        outcome.bot_utterances.extend(lines.into_iter().map(|l| l.text));

        if next.kind == NodeKind::ExerciseRecommendation {
            outcome.recommended_exercises.extend(next.exercise_ids.iter().cloned());
        }
        match next.sole_target() {
            Some(t) if next.kind.auto_advances() => {
                outcome
                    .transitions
                    .push((next.node_id.clone(), edge_key(next, None), t.to_owned()));
                current = t.to_owned();
            }
            _ => {
                outcome.next_node = next.node_id.clone();
                return Ok(outcome);
            }
        }
    }
    Err(FlowError::Internal("statement cycle without a question".into()))
}

/// Edge key a routing decision used: the label itself when the node has an
/// edge for it, else the node's only edge, else the default edge.
fn edge_key(node: &FlowNode, label: Option<&str>) -> String {
    match label {
        Some(l) if node.edges.contains_key(l) => l.to_owned(),
        _ if node.edges.len() == 1 => node.edges.keys().next().expect("one edge").clone(),
        _ => DEFAULT_EDGE.to_owned(),
    }
}

fn clarify<R: Respond>(
    session: &mut Session,
    node: &FlowNode,
    responder: &R,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutcome, FlowError> {
    session.clarify_attempts += 1;
    let lines = responder.respond(node, true, session, rng)?;
    record_bot_lines(session, &node.node_id, &lines)?;
    Ok(StepOutcome {
        bot_utterances: lines.into_iter().map(|l| l.text).collect(),
        next_node: node.node_id.clone(),
        recommended_exercises: Vec::new(),
        session_delta: SessionDelta::default(),
        entered: Vec::new(),
        transitions: Vec::new(),
        clarified: true,
    })
}

/// Exercises recommended at the end of `path`.
pub fn recommend(path: &[String], _emotion: EmotionLabel, graph: &FlowGraph) -> Result<Vec<String>, FlowError> {
    let last = path.last().ok_or(FlowError::NotRecommendation("<empty path>".into()))?;
    let node = graph.node(last).ok_or_else(|| FlowError::UnknownNode {
        from: "path".into(),
        target: last.clone(),
    })?;
    if node.kind != NodeKind::ExerciseRecommendation {
        return Err(FlowError::NotRecommendation(last.clone()));
    }
    Ok(node.exercise_ids.clone())
}
