//! Deployment configuration: one TOML file naming every asset.
//!
//! Relative asset paths resolve against the configuration file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::comprehension::DEFAULT_CONFIDENCE_THRESHOLD;
use crate::embedding::DEFAULT_DIMENSION;
use crate::engine::AssetError;
use crate::selector::SelectorConfig;
use crate::teacher::{DEFAULT_MAX_SUBSTITUTIONS, DEFAULT_VARIANTS};

/// Environment variable naming the configuration file.
pub const CONFIG_ENV: &str = "SAT_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_listen")]
    pub listen_address: String,
    #[serde(default = "default_persistence")]
    pub persistence_dir: PathBuf,
    pub assets: AssetPaths,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub selector: SelectorConfig,
    #[serde(default)]
    pub comprehension: ComprehensionConfig,
    #[serde(default)]
    pub teacher: TeacherConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_persistence() -> PathBuf {
    PathBuf::from("sessions")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetPaths {
    pub flow_graph: PathBuf,
    pub pools: PathBuf,
    /// Directory holding `negation.toml` and one `<node_id>.toml` per rule-based or name node.
    pub lexicons: PathBuf,
    /// Labeled `text<TAB>emotion` training set for the feeling question.
    pub emotion_training: PathBuf,
    /// Labeled training set per classifier-based node.
    #[serde(default)]
    pub classifiers: BTreeMap<String, PathBuf>,
    pub qa: PathBuf,
    #[serde(default)]
    pub augmentation: Option<PathBuf>,
    /// Precomputed embedding store (EMB1).
    #[serde(default)]
    pub embedding_store: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub dimension: usize,
    /// Hash texts the other tiers cannot embed.
    pub fallback: bool,
    pub remote_endpoint: Option<String>,
    pub remote_timeout_ms: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dimension: DEFAULT_DIMENSION,
            fallback: true,
            remote_endpoint: None,
            remote_timeout_ms: 5_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComprehensionConfig {
    pub confidence_threshold: f64,
}

impl Default for ComprehensionConfig {
    fn default() -> Self {
        ComprehensionConfig {
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    /// 0 disables the floor.
    pub confidence_floor: f64,
    pub variants_per_entry: usize,
    pub max_substitutions: usize,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            confidence_floor: 0.0,
            variants_per_entry: DEFAULT_VARIANTS,
            max_substitutions: DEFAULT_MAX_SUBSTITUTIONS,
            seed: 0,
        }
    }
}

impl Config {
    pub fn parse(content: &str, base_dir: &Path) -> Result<Self, AssetError> {
        let mut cfg: Config = toml::from_str(content).map_err(|e| AssetError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.selector.validate().map_err(|e| AssetError::Config(e.to_string()))?;
        if cfg.embedding.dimension == 0 {
            return Err(AssetError::Config("embedding.dimension must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, AssetError> {
        let content = std::fs::read_to_string(path).map_err(|_| AssetError::Missing(path.to_path_buf()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&content, &base).map_err(|e| match e {
            AssetError::Config(m) => AssetError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Resolves `--config` over `SAT_CONFIG`.
    pub fn locate(flag: Option<&Path>) -> Option<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Every asset file the configuration names, resolved, keyed by role.
    pub fn asset_files(&self) -> BTreeMap<String, PathBuf> {
        let a = &self.assets;
        let mut out = BTreeMap::from([
            ("flow_graph".to_owned(), self.resolve(&a.flow_graph)),
            ("pools".to_owned(), self.resolve(&a.pools)),
            ("emotion_training".to_owned(), self.resolve(&a.emotion_training)),
            ("qa".to_owned(), self.resolve(&a.qa)),
            ("negation".to_owned(), self.resolve(&a.lexicons).join("negation.toml")),
        ]);
        if let Some(p) = &a.augmentation {
            out.insert("augmentation".into(), self.resolve(p));
        }
        if let Some(p) = &a.embedding_store {
            out.insert("embedding_store".into(), self.resolve(p));
        }
        for (node, p) in &a.classifiers {
            out.insert(format!("classifier:{node}"), self.resolve(p));
        }
        out
    }

    pub fn persistence_path(&self) -> PathBuf {
        self.resolve(&self.persistence_dir)
    }
}
