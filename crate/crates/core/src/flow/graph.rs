use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FlowError;
use crate::model::EmotionLabel;

/// Outcome label that matches whenever a node has no edge for the comprehended label.
pub const DEFAULT_EDGE: &str = "default";

/// Most exercises the protocol defines.
pub const MAX_EXERCISES: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Statement,
    YesNoQuestion,
    OpenQuestion,
    EmotionQuestion,
    FormalityQuestion,
    NameQuestion,
    ExerciseRecommendation,
    Terminal,
}

impl NodeKind {
    pub fn is_question(self) -> bool {
        !matches!(
            self,
            NodeKind::Statement | NodeKind::ExerciseRecommendation | NodeKind::Terminal
        )
    }

    /// Nodes the session passes through without waiting for the user.
    pub fn auto_advances(self) -> bool {
        matches!(self, NodeKind::Statement | NodeKind::ExerciseRecommendation)
    }

    /// The only comprehension mode a node of this kind may declare.
    pub fn expected_mode(self) -> ComprehensionMode {
        match self {
            NodeKind::YesNoQuestion | NodeKind::FormalityQuestion => ComprehensionMode::RuleBased,
            NodeKind::OpenQuestion => ComprehensionMode::ClassifierBased,
            NodeKind::EmotionQuestion => ComprehensionMode::EmotionClassifier,
            _ => ComprehensionMode::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ComprehensionMode {
    RuleBased,
    ClassifierBased,
    EmotionClassifier,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exercise {
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub steps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowNode {
    pub node_id: String,
    pub kind: NodeKind,
    pub comprehension: ComprehensionMode,
    /// Outcome label to target node id.
    pub edges: BTreeMap<String, String>,
    pub exercise_ids: Vec<String>,
}

impl FlowNode {
    /// Target for an outcome label, falling back to the default edge.
    pub fn target(&self, label: &str) -> Option<&str> {
        self.edges
            .get(label)
            .or_else(|| self.edges.get(DEFAULT_EDGE))
            .map(String::as_str)
    }

    pub fn default_target(&self) -> Option<&str> {
        self.edges.get(DEFAULT_EDGE).map(String::as_str)
    }

    /// Target of a node with a single outgoing edge.
    pub fn sole_target(&self) -> Option<&str> {
        match self.edges.len() {
            1 => self.edges.values().next().map(String::as_str),
            _ => self.default_target(),
        }
    }

    /// Outcome labels other than the default edge.
    pub fn outcome_labels(&self) -> impl Iterator<Item = &str> {
        self.edges.keys().map(String::as_str).filter(|l| *l != DEFAULT_EDGE)
    }
}

/// The conversation flowchart plus its exercise catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGraph {
    pub nodes: BTreeMap<String, FlowNode>,
    pub start: String,
    pub exercise_catalog: BTreeMap<String, Exercise>,
}

// --- document schema -------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDocument {
    start: String,
    #[serde(default, rename = "node")]
    nodes: Vec<NodeDocument>,
    #[serde(default, rename = "exercise")]
    exercises: Vec<ExerciseDocument>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDocument {
    id: String,
    kind: NodeKind,
    comprehension: Option<ComprehensionMode>,
    #[serde(default)]
    edges: BTreeMap<String, String>,
    #[serde(default)]
    exercises: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExerciseDocument {
    id: String,
    title: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    steps: Vec<String>,
}

impl FlowGraph {
    /// Parses and validates a flow-graph document (TOML).
    pub fn load(document: &str) -> Result<Self, FlowError> {
        let doc: GraphDocument = toml::from_str(document).map_err(|e| FlowError::Parse(e.to_string()))?;

        let mut nodes = BTreeMap::new();
        for n in doc.nodes {
            if nodes.contains_key(&n.id) {
                return Err(FlowError::DuplicateNode(n.id));
            }
            let node = FlowNode {
                comprehension: n.comprehension.unwrap_or(n.kind.expected_mode()),
                node_id: n.id.clone(),
                kind: n.kind,
                edges: n.edges,
                exercise_ids: n.exercises,
            };
            nodes.insert(n.id, node);
        }

        let mut exercise_catalog = BTreeMap::new();
        for e in doc.exercises {
            if exercise_catalog.contains_key(&e.id) {
                return Err(FlowError::Invalid(format!("duplicate exercise id {}", e.id)));
            }
            exercise_catalog.insert(
                e.id,
                Exercise {
                    title: e.title,
                    description: e.description,
                    steps: e.steps,
                },
            );
        }

        let graph = FlowGraph {
            nodes,
            start: doc.start,
            exercise_catalog,
        };
        graph.validate()?;
        Ok(graph)
    }

    pub fn load_file(path: &Path) -> Result<Self, FlowError> {
        let text = std::fs::read_to_string(path).map_err(|e| FlowError::Io(format!("{}: {e}", path.display())))?;
        Self::load(&text)
    }

    pub fn node(&self, id: &str) -> Option<&FlowNode> {
        self.nodes.get(id)
    }

    /// Every edge as `(from, label, to)` in a stable order.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.nodes.values().flat_map(|n| {
            n.edges
                .iter()
                .map(move |(label, to)| (n.node_id.as_str(), label.as_str(), to.as_str()))
        })
    }

    /// Checks every structural invariant; called by [`FlowGraph::load`].
    pub fn validate(&self) -> Result<(), FlowError> {
        if !self.nodes.contains_key(&self.start) {
            return Err(FlowError::UnknownNode {
                from: "start".into(),
                target: self.start.clone(),
            });
        }
        if self.exercise_catalog.len() > MAX_EXERCISES {
            return Err(FlowError::TooManyExercises(self.exercise_catalog.len()));
        }

        for node in self.nodes.values() {
            for (label, target) in &node.edges {
                if !self.nodes.contains_key(target) {
                    return Err(FlowError::UnknownNode {
                        from: format!("{} --{label}-->", node.node_id),
                        target: target.clone(),
                    });
                }
            }
            self.validate_node(node)?;
        }

        self.check_terminal_reachability()
    }

    fn validate_node(&self, node: &FlowNode) -> Result<(), FlowError> {
        let id = &node.node_id;
        let invalid = |msg: String| Err(FlowError::Invalid(format!("node {id}: {msg}")));

        if node.comprehension != node.kind.expected_mode() {
            return invalid(format!(
                "{:?} nodes use {:?} comprehension, found {:?}",
                node.kind,
                node.kind.expected_mode(),
                node.comprehension
            ));
        }

        match node.kind {
            NodeKind::Terminal | NodeKind::Statement | NodeKind::ExerciseRecommendation => {
                if node.edges.len() > 1 {
                    return invalid(format!("{:?} nodes have at most one edge", node.kind));
                }
            }
            _ => {
                if node.edges.len() < 2 && node.default_target().is_none() {
                    return invalid("questions need two outcome edges or a default edge".into());
                }
            }
        }

        if node.kind == NodeKind::ExerciseRecommendation {
            if node.exercise_ids.is_empty() {
                return invalid("recommendation without exercises".into());
            }
        } else if !node.exercise_ids.is_empty() {
            return invalid("only recommendation nodes list exercises".into());
        }
        for ex in &node.exercise_ids {
            if !self.exercise_catalog.contains_key(ex) {
                return Err(FlowError::UnknownExercise(ex.clone()));
            }
        }

        // Totality over the labels a rule-based or emotion node can emit.
        let required: Vec<&str> = match node.kind {
            NodeKind::YesNoQuestion => vec!["yes", "no"],
            NodeKind::FormalityQuestion => vec!["formal", "friendly"],
            NodeKind::EmotionQuestion => EmotionLabel::ALL.iter().map(|l| l.as_str()).collect(),
            _ => Vec::new(),
        };
        for label in required {
            if node.target(label).is_none() {
                return invalid(format!("no edge for outcome {label:?}"));
            }
        }
        Ok(())
    }

    fn check_terminal_reachability(&self) -> Result<(), FlowError> {
        let mut reverse: HashMap<&str, Vec<&str>> = HashMap::new();
        for (from, _, to) in self.edges() {
            reverse.entry(to).or_default().push(from);
        }
        let mut reaches: BTreeSet<&str> = self
            .nodes
            .values()
            .filter(|n| n.kind == NodeKind::Terminal)
            .map(|n| n.node_id.as_str())
            .collect();
        let mut queue: VecDeque<&str> = reaches.iter().copied().collect();
        while let Some(n) = queue.pop_front() {
            for &p in reverse.get(n).into_iter().flatten() {
                if reaches.insert(p) {
                    queue.push_back(p);
                }
            }
        }
        match self.nodes.keys().find(|id| !reaches.contains(id.as_str())) {
            Some(id) => Err(FlowError::NoTerminalPath(id.clone())),
            None => Ok(()),
        }
    }

    /// Longest shortest-path distance from the start node.
    pub fn eccentricity_from_start(&self) -> usize {
        let mut dist: HashMap<&str, usize> = HashMap::from([(self.start.as_str(), 0)]);
        let mut queue = VecDeque::from([self.start.as_str()]);
        while let Some(n) = queue.pop_front() {
            let d = dist[n];
            for to in self.nodes[n].edges.values() {
                if !dist.contains_key(to.as_str()) {
                    dist.insert(to, d + 1);
                    queue.push_back(to);
                }
            }
        }
        dist.values().copied().max().unwrap_or(0)
    }
}
