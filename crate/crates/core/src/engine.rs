//! The assembled dialogue engine: flowchart, comprehension models, lexicons
//! and utterance pools checked against each other at load.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::comprehension::{
    classify_emotion, classify_polar, read_labeled_file, train_centroids, CentroidClassifier, ComprehensionError,
    EmotionModel, IntentClassifier, KeywordRule, NegationLexicon, RuleSet,
};
use crate::config::Config;
use crate::embedding::{EmbeddingError, EmbeddingStore, RemoteProvider};
use crate::flow::{
    self, BotLine, Comprehend, Comprehension, ComprehensionMode, FlowError, FlowGraph, FlowNode, NodeKind, Respond,
    StepOutcome,
};
use crate::model::{new_session, new_session_with_id, Formality, Session};
use crate::scalar::Scalar;
use crate::selector::{realize, select, PoolSet, SelectorConfig, SelectorError, UtterancePool, CLARIFY_NODE, NAME_PLACEHOLDER};
use crate::teacher::{read_qa_file, AugmentationRecipe, KnowledgeBase, TeacherError};
use crate::text;

/// Longest name, in tokens, taken from a name answer.
const MAX_NAME_TOKENS: usize = 3;

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("missing asset: {}", .0.display())]
    Missing(PathBuf),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Comprehension(#[from] ComprehensionError),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("inconsistent assets: {0}")]
    Inconsistent(String),
}

impl AssetError {
    /// Missing files exit differently from invalid ones.
    pub fn is_missing(&self) -> bool {
        matches!(self, AssetError::Missing(_))
    }
}

fn require(path: &Path) -> Result<&Path, AssetError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(AssetError::Missing(path.to_path_buf()))
    }
}

/// Per-node lexicon file: keyword rules for rule-based nodes, filler words
/// for name questions.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeLexicon {
    #[serde(default)]
    pub polarity: Option<[String; 2]>,
    #[serde(default, rename = "rule")]
    pub rules: Vec<KeywordRule>,
    /// Tokens dropped when extracting a name.
    #[serde(default)]
    pub fillers: Vec<String>,
}

impl NodeLexicon {
    pub fn parse(content: &str) -> Result<Self, ComprehensionError> {
        toml::from_str(content).map_err(|e| ComprehensionError::Lexicon(e.to_string()))
    }

    pub fn load_file(path: &Path) -> Result<Self, ComprehensionError> {
        let raw = std::fs::read_to_string(path).map_err(|e| ComprehensionError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&raw).map_err(|e| ComprehensionError::Lexicon(format!("{}: {e}", path.display())))
    }
}

fn polarity_for(kind: NodeKind) -> Option<[String; 2]> {
    match kind {
        NodeKind::YesNoQuestion => Some(["yes".into(), "no".into()]),
        NodeKind::FormalityQuestion => Some(["formal".into(), "friendly".into()]),
        _ => None,
    }
}

/// The name in an answer such as "my name is Sara": every token that is not
/// a filler word, up to three.
pub fn extract_name(input: &str, fillers: &HashSet<String>) -> Option<String> {
    let kept: Vec<&str> = text::raw_tokens(input)
        .into_iter()
        .filter(|t| !fillers.contains(&text::normalize(t)))
        .take(MAX_NAME_TOKENS)
        .collect();
    (!kept.is_empty()).then(|| kept.join(" "))
}

/// Everything an engine is built from.
pub struct EngineParts<T: Scalar> {
    pub graph: FlowGraph,
    pub pools: PoolSet,
    pub store: Arc<EmbeddingStore<T>>,
    pub selector: SelectorConfig,
    pub negation: NegationLexicon,
    pub lexicons: BTreeMap<String, NodeLexicon>,
    pub classifiers: BTreeMap<String, Arc<dyn IntentClassifier>>,
    pub emotion: Option<EmotionModel<T>>,
    pub confidence_threshold: f64,
}

struct NodeRules {
    rules: Option<RuleSet>,
    fillers: HashSet<String>,
}

/// Dialogue engine over immutable, mutually validated assets.
pub struct Engine<T: Scalar = f64> {
    graph: FlowGraph,
    pools: PoolSet,
    store: Arc<EmbeddingStore<T>>,
    selector: SelectorConfig,
    negation: NegationLexicon,
    rules: BTreeMap<String, NodeRules>,
    classifiers: BTreeMap<String, Arc<dyn IntentClassifier>>,
    emotion: Option<EmotionModel<T>>,
    threshold: f64,
}

impl<T: Scalar> std::fmt::Debug for Engine<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("nodes", &self.graph.nodes.len())
            .field("store", &self.store)
            .field("classifiers", &self.classifiers.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl<T: Scalar> Engine<T> {
    pub fn new(parts: EngineParts<T>) -> Result<Self, AssetError> {
        let EngineParts {
            graph,
            pools,
            store,
            selector,
            negation,
            lexicons,
            classifiers,
            emotion,
            confidence_threshold,
        } = parts;
        graph.validate()?;
        selector.validate()?;
        negation.validate()?;
        let bad = |m: String| Err(AssetError::Inconsistent(m));

        let mut rules = BTreeMap::new();
        for node in graph.nodes.values() {
            let id = &node.node_id;
            match node.comprehension {
                ComprehensionMode::RuleBased => {
                    let Some(lex) = lexicons.get(id) else {
                        return bad(format!("no keyword lexicon for rule-based node {id}"));
                    };
                    let expected = polarity_for(node.kind).expect("rule-based kinds have a polarity");
                    let polarity = lex.polarity.clone().unwrap_or_else(|| expected.clone());
                    if polarity != expected {
                        return bad(format!("node {id}: lexicon polarity {polarity:?}, expected {expected:?}"));
                    }
                    let set = RuleSet::new(lex.rules.clone(), polarity)
                        .map_err(|e| AssetError::Inconsistent(format!("node {id}: {e}")))?;
                    for label in set.labels() {
                        if node.target(label).is_none() {
                            return bad(format!("node {id}: keyword label {label:?} has no edge"));
                        }
                    }
                    rules.insert(id.clone(), NodeRules { rules: Some(set), fillers: HashSet::new() });
                }
                ComprehensionMode::ClassifierBased => {
                    let Some(c) = classifiers.get(id) else {
                        return bad(format!("no classifier for node {id}"));
                    };
                    for label in c.labels() {
                        if node.target(&label).is_none() {
                            return bad(format!("node {id}: classifier label {label:?} has no edge"));
                        }
                    }
                }
                ComprehensionMode::EmotionClassifier => {
                    if emotion.is_none() {
                        return bad(format!("node {id} needs the emotion model"));
                    }
                }
                ComprehensionMode::None => {
                    if node.kind == NodeKind::NameQuestion {
                        let fillers = lexicons
                            .get(id)
                            .map(|l| l.fillers.iter().map(|f| text::normalize(f)).collect())
                            .unwrap_or_default();
                        rules.insert(id.clone(), NodeRules { rules: None, fillers });
                    }
                }
            }
        }

        let has_questions = graph.nodes.values().any(|n| n.kind.is_question());
        for formality in [Formality::Formal, Formality::Friendly] {
            for node in graph.nodes.values().filter(|n| n.kind != NodeKind::Terminal) {
                if pools.get(&node.node_id, formality).is_none_or(|p| p.utterances.is_empty()) {
                    return bad(format!("no {formality} pool for node {}", node.node_id));
                }
            }
            if has_questions && pools.get(CLARIFY_NODE, formality).is_none() {
                return bad(format!("no {formality} clarification pool ({CLARIFY_NODE})"));
            }
        }
        for pool in pools.iter() {
            if pool.node_id != CLARIFY_NODE && graph.node(&pool.node_id).is_none() {
                return bad(format!("pool for unknown node {}", pool.node_id));
            }
            if pool.formality == Formality::Friendly && pool.utterances.iter().all(|u| u.text.contains(NAME_PLACEHOLDER)) {
                return bad(format!("friendly pool for {} has no line usable without a name", pool.node_id));
            }
            for u in &pool.utterances {
                store.embed(&u.embedding_ref).map_err(|e| {
                    AssetError::Inconsistent(format!("utterance {}: embedding {:?}: {e}", u.utterance_id, u.embedding_ref))
                })?;
            }
        }

        Ok(Engine {
            graph,
            pools,
            store,
            selector,
            negation,
            rules,
            classifiers,
            emotion,
            threshold: confidence_threshold,
        })
    }

    pub fn graph(&self) -> &FlowGraph {
        &self.graph
    }

    pub fn pools(&self) -> &PoolSet {
        &self.pools
    }

    pub fn store(&self) -> &Arc<EmbeddingStore<T>> {
        &self.store
    }

    pub fn selector_config(&self) -> &SelectorConfig {
        &self.selector
    }

    pub fn emotion_model(&self) -> Option<&EmotionModel<T>> {
        self.emotion.as_ref()
    }

    /// Opens a session and speaks the start node's lines.
    pub fn start(&self, seed: u64) -> Result<(Session, Vec<String>), FlowError> {
        let mut s = new_session(seed, &self.graph);
        let greeting = flow::greet(&mut s, &self.graph, self)?;
        Ok((s, greeting))
    }

    pub fn start_with_id(&self, session_id: String, seed: u64) -> Result<(Session, Vec<String>), FlowError> {
        let mut s = new_session_with_id(session_id, seed, &self.graph);
        let greeting = flow::greet(&mut s, &self.graph, self)?;
        Ok((s, greeting))
    }

    pub fn step(&self, session: &mut Session, input: &str) -> Result<StepOutcome, FlowError> {
        flow::step(session, input, &self.graph, self, self)
    }

    fn confident(&self, label: String, confidence: f64) -> Option<String> {
        (confidence >= self.threshold).then_some(label)
    }
}

impl<T: Scalar> Comprehend for Engine<T> {
    fn comprehend(&self, node: &FlowNode, input: &str, _session: &Session) -> Result<Comprehension, FlowError> {
        if text::tokenize(input).is_empty() {
            return Ok(Comprehension::default());
        }
        let fail = |e: ComprehensionError| FlowError::Comprehension(e.to_string());
        let id = &node.node_id;
        match (node.kind, node.comprehension) {
            (NodeKind::NameQuestion, _) => {
                let fillers = &self.rules.get(id).expect("name nodes registered at load").fillers;
                Ok(Comprehension {
                    name: extract_name(input, fillers),
                    ..Default::default()
                })
            }
            (_, ComprehensionMode::RuleBased) => {
                let set = self.rules[id].rules.as_ref().expect("rule-based nodes registered at load");
                let label = classify_polar(input, set, &self.negation);
                let formality = match (node.kind, label.as_deref()) {
                    (NodeKind::FormalityQuestion, Some("formal")) => Some(Formality::Formal),
                    (NodeKind::FormalityQuestion, Some("friendly")) => Some(Formality::Friendly),
                    _ => None,
                };
                Ok(Comprehension {
                    label,
                    formality,
                    ..Default::default()
                })
            }
            (_, ComprehensionMode::ClassifierBased) => {
                let (label, confidence) = self.classifiers[id].classify(input).map_err(fail)?;
                Ok(Comprehension {
                    label: self.confident(label, confidence),
                    ..Default::default()
                })
            }
            (_, ComprehensionMode::EmotionClassifier) => {
                let model = self.emotion.as_ref().expect("checked at load");
                let (emotion, confidence) = classify_emotion(input, model, &self.store).map_err(fail)?;
                let label = self.confident(emotion.as_str().to_owned(), confidence.to_f64_lossy());
                Ok(Comprehension {
                    emotion: label.is_some().then_some(emotion),
                    label,
                    ..Default::default()
                })
            }
            (_, ComprehensionMode::None) => Ok(Comprehension::default()),
        }
    }
}

impl<T: Scalar> Respond for Engine<T> {
    fn respond(
        &self,
        node: &FlowNode,
        clarify: bool,
        session: &Session,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<BotLine>, FlowError> {
        let pool_node = if clarify { CLARIFY_NODE } else { node.node_id.as_str() };
        let Some(pool) = self.pools.get(pool_node, session.register()) else {
            return Ok(Vec::new());
        };
        let nameless;
        let pool = if session.user_name.is_none() {
            nameless = UtterancePool {
                node_id: pool.node_id.clone(),
                formality: pool.formality,
                utterances: pool
                    .utterances
                    .iter()
                    .filter(|u| !u.text.contains(NAME_PLACEHOLDER))
                    .cloned()
                    .collect(),
            };
            &nameless
        } else {
            pool
        };
        let fail = |e: SelectorError| FlowError::Response(e.to_string());
        let u = select(pool, session, &self.selector, &self.store, rng).map_err(fail)?;
        let text = realize(u, session, &self.selector).map_err(fail)?;
        Ok(vec![BotLine {
            text,
            utterance_id: Some(u.utterance_id.clone()),
        }])
    }
}

/// Engine plus FAQ retriever, loaded from one configuration.
pub struct Deployment<T: Scalar = f64> {
    pub config: Config,
    pub engine: Arc<Engine<T>>,
    pub teacher: Arc<KnowledgeBase<T>>,
    pub recipe: AugmentationRecipe,
}

impl<T: Scalar> std::fmt::Debug for Deployment<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Deployment")
            .field("engine", &self.engine)
            .field("teacher", &self.teacher)
            .finish()
    }
}

/// Builds the embedding store a configuration describes.
pub fn load_store<T: Scalar>(config: &Config) -> Result<EmbeddingStore<T>, AssetError> {
    let e = &config.embedding;
    let mut store = match &config.assets.embedding_store {
        Some(p) => {
            let s = EmbeddingStore::read_file(require(&config.resolve(p))?)?;
            if s.dimension() != e.dimension {
                return Err(AssetError::Config(format!(
                    "embedding store dimension {} differs from configured {}",
                    s.dimension(),
                    e.dimension
                )));
            }
            s.with_fallback(e.fallback)
        }
        None if e.fallback || e.remote_endpoint.is_some() => EmbeddingStore::fallback(e.dimension).with_fallback(e.fallback),
        None => return Err(AssetError::Config("no embedding source: enable fallback, a store or a remote endpoint".into())),
    };
    if let Some(url) = &e.remote_endpoint {
        let provider = RemoteProvider::new(url.clone(), Duration::from_millis(e.remote_timeout_ms));
        store = store.with_remote(Arc::new(provider));
    }
    Ok(store)
}

impl<T: Scalar> Deployment<T> {
    pub fn load(config: Config) -> Result<Self, AssetError> {
        let store = Arc::new(load_store::<T>(&config)?);
        Self::load_with_store(config, store)
    }

    pub fn load_with_store(config: Config, store: Arc<EmbeddingStore<T>>) -> Result<Self, AssetError> {
        let a = &config.assets;
        let graph = FlowGraph::load_file(require(&config.resolve(&a.flow_graph))?)?;
        let pools = PoolSet::load_file(require(&config.resolve(&a.pools))?)?;

        let lex_dir = config.resolve(&a.lexicons);
        let negation = NegationLexicon::load_file(require(&lex_dir.join("negation.toml"))?)?;
        let mut lexicons = BTreeMap::new();
        for node in graph.nodes.values() {
            let path = lex_dir.join(format!("{}.toml", node.node_id));
            match node.comprehension {
                ComprehensionMode::RuleBased => {
                    lexicons.insert(node.node_id.clone(), NodeLexicon::load_file(require(&path)?)?);
                }
                ComprehensionMode::None if node.kind == NodeKind::NameQuestion && path.exists() => {
                    lexicons.insert(node.node_id.clone(), NodeLexicon::load_file(&path)?);
                }
                _ => {}
            }
        }

        let mut classifiers: BTreeMap<String, Arc<dyn IntentClassifier>> = BTreeMap::new();
        for (node, p) in &a.classifiers {
            if graph.node(node).is_none_or(|n| n.comprehension != ComprehensionMode::ClassifierBased) {
                return Err(AssetError::Config(format!("classifier configured for {node}, not a classifier-based node")));
            }
            let labeled = read_labeled_file(require(&config.resolve(p))?)?;
            let model = train_centroids(&labeled, &store)?;
            classifiers.insert(node.clone(), Arc::new(CentroidClassifier { model, store: store.clone() }));
        }

        let needs_emotion = graph.nodes.values().any(|n| n.comprehension == ComprehensionMode::EmotionClassifier);
        let emotion_path = require(&config.resolve(&a.emotion_training))?.to_path_buf();
        let emotion = if needs_emotion {
            Some(EmotionModel::train(&read_labeled_file(&emotion_path)?, &store)?)
        } else {
            None
        };

        let engine = Engine::new(EngineParts {
            graph,
            pools,
            store: store.clone(),
            selector: config.selector.clone(),
            negation,
            lexicons,
            classifiers,
            emotion,
            confidence_threshold: config.comprehension.confidence_threshold,
        })?;

        let qa = read_qa_file(require(&config.resolve(&a.qa))?)?;
        let teacher = KnowledgeBase::new(qa, store)?.with_confidence_floor(config.teacher.confidence_floor);
        let recipe = match &a.augmentation {
            Some(p) => AugmentationRecipe::load_file(require(&config.resolve(p))?)?,
            None => AugmentationRecipe::identity(),
        };

        Ok(Deployment {
            config,
            engine: Arc::new(engine),
            teacher: Arc::new(teacher),
            recipe,
        })
    }
}

/// User inputs of a chat script: one per line, `#` comments and blank lines skipped.
pub fn parse_script(content: &str) -> Vec<String> {
    content
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

/// Share of a graph's nodes and edges that the given transitions visit.
#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub nodes: BTreeSet<String>,
    pub edges: BTreeSet<(String, String, String)>,
    pub node_total: usize,
    pub edge_total: usize,
}

impl Coverage {
    pub fn new(graph: &FlowGraph) -> Self {
        Coverage {
            nodes: BTreeSet::from([graph.start.clone()]),
            edges: BTreeSet::new(),
            node_total: graph.nodes.len(),
            edge_total: graph.edges().count(),
        }
    }

    pub fn record(&mut self, transitions: &[(String, String, String)]) {
        for (from, label, to) in transitions {
            self.nodes.insert(from.clone());
            self.nodes.insert(to.clone());
            self.edges.insert((from.clone(), label.clone(), to.clone()));
        }
    }

    pub fn node_ratio(&self) -> f64 {
        self.nodes.len() as f64 / self.node_total as f64
    }

    pub fn edge_ratio(&self) -> f64 {
        self.edges.len() as f64 / self.edge_total as f64
    }

    /// Edges never taken.
    pub fn missing_edges<'g>(&self, graph: &'g FlowGraph) -> Vec<(&'g str, &'g str, &'g str)> {
        graph
            .edges()
            .filter(|(f, l, t)| !self.edges.contains(&(f.to_string(), l.to_string(), t.to_string())))
            .collect()
    }
}
