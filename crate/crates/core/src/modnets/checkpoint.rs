//! Run directory layout: `meta.json` (config, task, trace summary, recorded
//! modelling decisions, tensor manifest), `weights.bin` (little-endian `f64`
//! in manifest order) and `trace.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochRecord, Model, ModelConfig, ModnetError, TaskSpec, TrainedModel};
use crate::autodiff::Tensor;

pub const META_FILE: &str = "meta.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const TRACE_FILE: &str = "trace.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub epochs: usize,
    pub final_test_accuracy: f64,
    pub converged: bool,
    pub first_perfect_epoch: Option<usize>,
    pub final_train_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: u32,
    pub config: ModelConfig,
    pub task: TaskSpec,
    pub summary: TraceSummary,
    pub decisions: BTreeMap<String, String>,
    pub tensors: Vec<TensorEntry>,
}

/// Modelling choices not pinned down by the task definition, stored with
/// every checkpoint.
pub fn recorded_decisions() -> BTreeMap<String, String> {
    [
        ("precision", "f64 throughout"),
        ("optimizer", "Adam beta1=0.9 beta2=0.999 eps=1e-8"),
        ("weight_decay", "coupled L2: decay*w added to the gradient before moment updates"),
        ("init", "uniform +-1/sqrt(fan_in); embedding and positional tables use fan_in = modulus"),
        (
            "attention",
            "single head, learned positional vectors, no biases, no residual, no '=' token, query and output at the second position",
        ),
        ("stopping", "stop on the first perfect epoch at least `patience` epochs after test accuracy first reaches 100%, or at max_epochs"),
        ("split", "train size = floor(train_fraction * n^2)"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

pub fn summarize(trained: &TrainedModel) -> TraceSummary {
    TraceSummary {
        epochs: trained.trace.len(),
        final_test_accuracy: trained.final_test_accuracy,
        converged: trained.converged,
        first_perfect_epoch: trained.trace.iter().find(|r| r.test_accuracy == 1.0).map(|r| r.epoch),
        final_train_loss: trained.trace.last().map(|r| r.train_loss),
    }
}

pub fn save_checkpoint(trained: &TrainedModel, dir: &Path) -> Result<(), ModnetError> {
    fs::create_dir_all(dir)?;
    let model = &trained.model;
    let meta = CheckpointMeta {
        format: 1,
        config: model.config,
        task: trained.task,
        summary: summarize(trained),
        decisions: recorded_decisions(),
        tensors: model
            .names
            .iter()
            .zip(&model.params)
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let mut bytes = Vec::with_capacity(model.params.iter().map(|t| t.len() * 8).sum());
    for t in &model.params {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(WEIGHTS_FILE), bytes)?;
    let mut trace = String::from("epoch,train_loss,train_accuracy,test_loss,test_accuracy\n");
    for r in &trained.trace {
        trace.push_str(&format!(
            "{},{:e},{},{:e},{}\n",
            r.epoch, r.train_loss, r.train_accuracy, r.test_loss, r.test_accuracy
        ));
    }
    fs::write(dir.join(TRACE_FILE), trace)?;
    // meta last: its presence marks a complete checkpoint
    let mut f = fs::File::create(dir.join(META_FILE))?;
    f.write_all(serde_json::to_string_pretty(&meta)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn load_meta(dir: &Path) -> Result<CheckpointMeta, ModnetError> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?)
}

pub fn load_checkpoint(dir: &Path) -> Result<TrainedModel, ModnetError> {
    let meta = load_meta(dir)?;
    let bytes = fs::read(dir.join(WEIGHTS_FILE))?;
    let expected: usize = meta.tensors.iter().map(|t| t.shape.iter().product::<usize>() * 8).sum();
    if bytes.len() != expected {
        return Err(ModnetError::Checkpoint(format!(
            "weights.bin has {} bytes, manifest declares {expected}",
            bytes.len()
        )));
    }
    let reference = Model::init(meta.config, meta.task.modulus, 0)?;
    if reference.names != meta.tensors.iter().map(|t| t.name.clone()).collect::<Vec<_>>() {
        return Err(ModnetError::Checkpoint("tensor manifest does not match architecture".into()));
    }
    let mut offset = 0;
    let mut params = Vec::new();
    for entry in &meta.tensors {
        let len: usize = entry.shape.iter().product();
        let data = bytes[offset..offset + 8 * len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        offset += 8 * len;
        params.push(Tensor::new(entry.shape.clone(), data)?);
    }
    let trace = read_trace(&fs::read_to_string(dir.join(TRACE_FILE))?)?;
    Ok(TrainedModel {
        model: Model {
            config: meta.config,
            modulus: meta.task.modulus,
            names: reference.names,
            params,
        },
        task: meta.task,
        trace,
        final_test_accuracy: meta.summary.final_test_accuracy,
        converged: meta.summary.converged,
    })
}

fn read_trace(text: &str) -> Result<Vec<EpochRecord>, ModnetError> {
    let bad = |line: &str| ModnetError::Checkpoint(format!("malformed trace row `{line}`"));
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(line));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
            Ok(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad(line))?,
                train_loss: num(f[1])?,
                train_accuracy: num(f[2])?,
                test_loss: num(f[3])?,
                test_accuracy: num(f[4])?,
            })
        })
        .collect()
}
