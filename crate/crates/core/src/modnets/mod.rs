//! Modular-addition dataset, the four architectures, training and full-grid
//! activation extraction.

mod checkpoint;
mod config;
mod data;
mod model;
mod train;

pub use checkpoint::{
    load_checkpoint, load_meta, recorded_decisions, save_checkpoint, summarize, CheckpointMeta, TensorEntry,
    TraceSummary, META_FILE, TRACE_FILE, WEIGHTS_FILE,
};
pub use config::{Architecture, ModelConfig, TaskSpec};
pub use data::{train_size, Dataset};
pub use model::{loss_gradient_error, Model, Wiring, WiringMode};
pub use train::{
    build_model, evaluate, extract_activations, grid_logits, train_model, train_model_with_hook, ActivationDump,
    EpochHook, EpochRecord, TrainedModel, CONVERGED_ACCURACY,
};

use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error)]
pub enum ModnetError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("non-finite gradient for `{param}` at epoch {epoch}, step {step}")]
    NonFiniteGradient { epoch: usize, step: usize, param: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
