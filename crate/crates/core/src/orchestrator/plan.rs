use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use super::OrchestratorError;
use crate::modnets::{Architecture, ModelConfig, TaskSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Analysis {
    Pad,
    Mmd,
    Metrics,
    Pca,
    Tda,
    TheoremOracle,
}

impl Analysis {
    pub const ALL: [Analysis; 6] = [
        Analysis::Pad,
        Analysis::Mmd,
        Analysis::Metrics,
        Analysis::Pca,
        Analysis::Tda,
        Analysis::TheoremOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Analysis::Pad => "pad",
            Analysis::Mmd => "mmd",
            Analysis::Metrics => "metrics",
            Analysis::Pca => "pca",
            Analysis::Tda => "tda",
            Analysis::TheoremOracle => "theorem-oracle",
        }
    }

    /// Whether the analysis reads trained models.
    pub fn needs_models(self) -> bool {
        self != Analysis::TheoremOracle
    }
}

impl fmt::Display for Analysis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Analysis {
    type Err = OrchestratorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Analysis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| OrchestratorError::Config(format!("unknown analysis `{s}`")))
    }
}

/// Per-architecture overrides of the model defaults.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchOverrides {
    pub embedding_dim: Option<usize>,
    pub hidden_width: Option<usize>,
    pub num_hidden_layers: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub max_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub patience: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    /// Share of non-DC power the key-frequency bins must hold.
    pub min_energy_share: f64,
    /// Clusters smaller than this are skipped by the geometric analyses.
    pub min_cluster_size: usize,
    pub mmd_points: usize,
    pub mmd_permutations: usize,
    pub tda_landmarks: usize,
    /// Bars shorter than this fraction of the cloud's enclosing radius are noise.
    pub bar_threshold: f64,
    pub tda_max_clusters: usize,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            min_energy_share: crate::freq_cluster::DEFAULT_MIN_ENERGY_SHARE,
            min_cluster_size: 4,
            mmd_points: 2000,
            mmd_permutations: 5000,
            tda_landmarks: 250,
            bar_threshold: 0.3,
            tda_max_clusters: 3,
        }
    }
}

fn seeds_from<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        List(Vec<u64>),
        Range(String),
    }
    match Raw::deserialize(d)? {
        Raw::List(v) => Ok(v),
        Raw::Range(s) => parse_seed_range(&s).map_err(serde::de::Error::custom),
    }
}

/// Parses `a..b` (exclusive), `a..=b`, or a comma-separated list.
pub fn parse_seed_range(s: &str) -> Result<Vec<u64>, OrchestratorError> {
    let bad = || OrchestratorError::Config(format!("bad seed range `{s}`"));
    let s = s.trim();
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let (hi, inclusive) = match hi.strip_prefix('=') {
            Some(h) => (h, true),
            None => (hi, false),
        };
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        let end = if inclusive { hi + 1 } else { hi };
        if end <= lo {
            return Err(bad());
        }
        Ok((lo..end).collect())
    } else {
        s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
    }
}

fn default_modulus() -> usize {
    59
}

fn default_fraction() -> f64 {
    0.9
}

fn default_output() -> PathBuf {
    PathBuf::from("modgeo-out")
}

/// Everything a sweep needs. Loaded from TOML; see `configs/default.toml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_modulus")]
    pub modulus: usize,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    pub architectures: Vec<Architecture>,
    #[serde(deserialize_with = "seeds_from")]
    pub seeds: Vec<u64>,
    pub analyses: Vec<Analysis>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub arch: BTreeMap<Architecture, ArchOverrides>,
    #[serde(default)]
    pub settings: AnalysisSettings,
}

impl ExperimentPlan {
    pub fn new(architectures: Vec<Architecture>, seeds: Vec<u64>, analyses: Vec<Analysis>, output_dir: PathBuf) -> Self {
        ExperimentPlan {
            master_seed: 0,
            modulus: 59,
            train_fraction: 0.9,
            architectures,
            seeds,
            analyses,
            output_dir,
            arch: BTreeMap::new(),
            settings: AnalysisSettings::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, OrchestratorError> {
        let plan: ExperimentPlan = toml::from_str(text).map_err(|e| OrchestratorError::Config(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: &str| Err(OrchestratorError::Config(m.to_string()));
        if self.architectures.is_empty() {
            return bad("no architectures");
        }
        if self.seeds.is_empty() {
            return bad("no seeds");
        }
        if self.analyses.is_empty() {
            return bad("no analyses");
        }
        TaskSpec {
            modulus: self.modulus,
            train_fraction: self.train_fraction,
            seed: 0,
        }
        .validate()?;
        for &a in &self.architectures {
            self.model_config(a).validate()?;
        }
        Ok(())
    }

    pub fn model_config(&self, arch: Architecture) -> ModelConfig {
        let mut c = ModelConfig::new(arch);
        if let Some(o) = self.arch.get(&arch) {
            c.embedding_dim = o.embedding_dim.unwrap_or(c.embedding_dim);
            c.hidden_width = o.hidden_width.unwrap_or(c.hidden_width);
            c.num_hidden_layers = o.num_hidden_layers.unwrap_or(c.num_hidden_layers);
            c.learning_rate = o.learning_rate.unwrap_or(c.learning_rate);
            c.weight_decay = o.weight_decay.unwrap_or(c.weight_decay);
            c.max_epochs = o.max_epochs.unwrap_or(c.max_epochs);
            c.batch_size = o.batch_size.unwrap_or(c.batch_size);
            c.patience = o.patience.unwrap_or(c.patience);
        }
        c
    }

    pub fn task(&self, seed: u64) -> TaskSpec {
        TaskSpec {
            modulus: self.modulus,
            train_fraction: self.train_fraction,
            seed,
        }
    }

    /// Hash of everything but the output location.
    pub fn config_hash(&self) -> String {
        let mut copy = self.clone();
        copy.output_dir = PathBuf::new();
        hash_json(&copy)
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    hash_bytes(&serde_json::to_vec(value).expect("plan types serialize"))
}
