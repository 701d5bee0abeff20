use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModnetError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Architecture {
    MlpAdd,
    MlpConcat,
    Attention0,
    Attention1,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::MlpAdd,
        Architecture::MlpConcat,
        Architecture::Attention0,
        Architecture::Attention1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::MlpAdd => "MlpAdd",
            Architecture::MlpConcat => "MlpConcat",
            Architecture::Attention0 => "Attention0",
            Architecture::Attention1 => "Attention1",
        }
    }

    /// `(learning_rate, weight_decay)` used when a config does not override them.
    pub fn default_hyperparameters(self) -> (f64, f64) {
        match self {
            Architecture::Attention1 => (0.00075, 0.000025),
            Architecture::Attention0 => (0.00025, 0.000001),
            Architecture::MlpAdd | Architecture::MlpConcat => (0.0005, 0.0001),
        }
    }

    pub fn is_attention(self) -> bool {
        matches!(self, Architecture::Attention0 | Architecture::Attention1)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = ModnetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "mlpadd" | "add" => Ok(Architecture::MlpAdd),
            "mlpconcat" | "concat" => Ok(Architecture::MlpConcat),
            "attention0" | "attention00" | "attn0" | "pizza" => Ok(Architecture::Attention0),
            "attention1" | "attention10" | "attn1" | "clock" => Ok(Architecture::Attention1),
            _ => Err(ModnetError::UnknownArchitecture(s.to_string())),
        }
    }
}

/// Modulus, split fraction and split seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub modulus: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl TaskSpec {
    pub fn new(modulus: usize, seed: u64) -> Self {
        TaskSpec {
            modulus,
            train_fraction: 0.9,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModnetError> {
        if self.modulus < 3 {
            return Err(ModnetError::InvalidTask(format!("modulus {} < 3", self.modulus)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(ModnetError::InvalidTask(format!(
                "train fraction {} outside (0, 1]",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec::new(59, 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub embedding_dim: usize,
    pub hidden_width: usize,
    pub num_hidden_layers: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs to keep training after test accuracy first reaches 100%.
    pub patience: usize,
}

impl ModelConfig {
    pub fn new(architecture: Architecture) -> Self {
        let (learning_rate, weight_decay) = architecture.default_hyperparameters();
        ModelConfig {
            architecture,
            embedding_dim: 128,
            hidden_width: 1024,
            num_hidden_layers: 1,
            learning_rate,
            weight_decay,
            max_epochs: 30_000,
            batch_size: 59,
            patience: 200,
        }
    }

    pub fn validate(&self) -> Result<(), ModnetError> {
        let bad = |what: &str| Err(ModnetError::InvalidConfig(what.to_string()));
        if self.embedding_dim == 0 || self.hidden_width == 0 || self.batch_size == 0 {
            return bad("dimensions and batch size must be positive");
        }
        if self.num_hidden_layers == 0 {
            return bad("at least one hidden layer is required");
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning rate must be positive and weight decay non-negative");
        }
        Ok(())
    }
}
