use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, Model, ModelConfig, ModnetError, TaskSpec, WiringMode};
use crate::autodiff::{AdamConfig, AdamState, Tensor};
use crate::seeds;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

/// A model together with its task and training history.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub model: Model,
    pub task: TaskSpec,
    pub trace: Vec<EpochRecord>,
    pub final_test_accuracy: f64,
    /// Final test accuracy reached at least [`CONVERGED_ACCURACY`].
    pub converged: bool,
}

pub const CONVERGED_ACCURACY: f64 = 0.95;

/// Initializes an untrained model for `task`. Parameter init draws from the
/// task seed's `init` substream.
pub fn build_model(config: ModelConfig, task: TaskSpec) -> Result<TrainedModel, ModnetError> {
    task.validate()?;
    let model = Model::init(config, task.modulus, task.seed)?;
    Ok(TrainedModel {
        model,
        task,
        trace: Vec::new(),
        final_test_accuracy: 0.0,
        converged: false,
    })
}

/// Loss and accuracy of `model` on the pairs in `indices`.
pub fn evaluate(model: &Model, indices: &[usize]) -> Result<(f64, f64), ModnetError> {
    if indices.is_empty() {
        return Ok((0.0, 1.0));
    }
    let n = model.modulus;
    let mut wiring = model.wiring(indices.len(), WiringMode::Training)?;
    let a: Vec<usize> = indices.iter().map(|k| k / n).collect();
    let b: Vec<usize> = indices.iter().map(|k| k % n).collect();
    wiring.run_pairs(&model.params, &a, &b)?;
    let logits = wiring.logits();
    let correct = (0..indices.len())
        .filter(|&r| argmax(logits.row(r)) == (a[r] + b[r]) % n)
        .count();
    let loss = wiring.loss_value().expect("training wiring has a loss");
    Ok((loss, correct as f64 / indices.len() as f64))
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Callback invoked after every epoch; return `false` to stop early.
pub type EpochHook<'a> = dyn FnMut(&EpochRecord) -> bool + 'a;

/// Minibatch Adam training with the model's own hyperparameters.
///
/// Stops on the first perfect epoch at least `patience` epochs after test
/// accuracy first reaches exactly 1, or at `max_epochs`. Attention models
/// flicker by a pair or two after generalizing, so the window itself need not
/// stay perfect. A non-finite loss aborts with a diagnostic.
pub fn train_model(mut trained: TrainedModel, data: &Dataset) -> Result<TrainedModel, ModnetError> {
    train_model_with_hook(&mut trained, data, &mut |_| true)?;
    Ok(trained)
}

pub fn train_model_with_hook(
    trained: &mut TrainedModel,
    data: &Dataset,
    hook: &mut EpochHook<'_>,
) -> Result<(), ModnetError> {
    let cfg = trained.model.config;
    let n = trained.model.modulus;
    if data.modulus != n {
        return Err(ModnetError::InvalidTask(format!(
            "dataset modulus {} differs from model modulus {n}",
            data.modulus
        )));
    }
    if data.train.is_empty() {
        return Err(ModnetError::InvalidTask("empty training split".into()));
    }
    let mut adam = AdamState::new(AdamConfig::new(cfg.learning_rate, cfg.weight_decay), &trained.model.params);
    let mut rng = seeds::rng(trained.task.seed, "train", 0);
    let mut wirings = HashMap::new();
    let mut order = data.train.clone();
    let start_epoch = trained.trace.len();
    // without a held-out split, stopping falls back to train accuracy
    let watch = |r: &EpochRecord| if data.test.is_empty() { r.train_accuracy } else { r.test_accuracy };
    let mut first_perfect = trained.trace.iter().find(|r| watch(r) == 1.0).map(|r| r.epoch);

    for epoch in start_epoch..cfg.max_epochs {
        // stop once the window has passed, but only on a perfect epoch
        let last_perfect = trained.trace.last().is_some_and(|r| watch(r) == 1.0);
        if first_perfect.is_some_and(|first| epoch > first + cfg.patience) && last_perfect {
            break;
        }
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let wiring = match wirings.entry(chunk.len()) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(v) => {
                    v.insert(trained.model.wiring(chunk.len(), WiringMode::Training)?)
                }
            };
            let a: Vec<usize> = chunk.iter().map(|k| k / n).collect();
            let b: Vec<usize> = chunk.iter().map(|k| k % n).collect();
            wiring.run_pairs(&trained.model.params, &a, &b)?;
            let loss = wiring.loss_value().expect("training wiring has a loss");
            if !loss.is_finite() {
                return Err(ModnetError::NonFiniteLoss { epoch, step });
            }
            let logits = wiring.logits();
            correct += (0..chunk.len()).filter(|&r| argmax(logits.row(r)) == (a[r] + b[r]) % n).count();
            loss_sum += loss * chunk.len() as f64;
            let loss_node = wiring.loss.expect("training wiring has a loss");
            wiring.graph.backward(loss_node)?;
            let grads: Vec<&Tensor> = wiring
                .params
                .iter()
                .map(|&id| wiring.graph.grad(id).expect("every parameter reaches the loss"))
                .collect();
            adam.update(&mut trained.model.params, &grads).map_err(|e| match e {
                crate::autodiff::AutodiffError::NonFiniteGradient { param } => ModnetError::NonFiniteGradient {
                    epoch,
                    step,
                    param: trained.model.names[param].clone(),
                },
                other => other.into(),
            })?;
        }
        let (test_loss, test_accuracy) = evaluate(&trained.model, &data.test)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_accuracy: correct as f64 / order.len() as f64,
            test_loss,
            test_accuracy,
        };
        if watch(&record) == 1.0 && first_perfect.is_none() {
            first_perfect = Some(epoch);
        }
        trained.trace.push(record);
        log::debug!(
            "{} seed {} epoch {epoch}: train {:.4}/{:.4} test {:.4}/{:.4}",
            cfg.architecture,
            trained.task.seed,
            record.train_loss,
            record.train_accuracy,
            test_loss,
            test_accuracy
        );
        if !hook(&record) {
            break;
        }
    }
    let (_, final_acc) = evaluate(&trained.model, &data.test)?;
    trained.final_test_accuracy = final_acc;
    trained.converged = final_acc >= CONVERGED_ACCURACY;
    Ok(())
}

/// Activations of one hidden layer over the full input grid. Row `a * n + b`
/// holds input `(a, b)`.
#[derive(Clone, Debug)]
pub struct ActivationDump {
    pub layer_index: usize,
    pub preactivations: Tensor,
    pub postactivations: Tensor,
    pub logits: Arc<Tensor>,
}

/// Evaluates every pair in `Z_n x Z_n` and returns one dump per hidden layer.
pub fn extract_activations(model: &Model) -> Result<Vec<ActivationDump>, ModnetError> {
    let n = model.modulus;
    let mut wiring = model.wiring(n * n, WiringMode::Evaluation)?;
    let a: Vec<usize> = (0..n * n).map(|k| k / n).collect();
    let b: Vec<usize> = (0..n * n).map(|k| k % n).collect();
    wiring.run_pairs(&model.params, &a, &b)?;
    let logits = Arc::new(wiring.logits().clone());
    Ok(wiring
        .hidden_preactivations
        .iter()
        .enumerate()
        .map(|(layer_index, &id)| {
            let pre = wiring.graph.value(id).expect("forward ran").clone();
            let post = Tensor::from_parts(pre.shape().to_vec(), pre.data().iter().map(|v| v.max(0.0)).collect());
            ActivationDump {
                layer_index,
                preactivations: pre,
                postactivations: post,
                logits: Arc::clone(&logits),
            }
        })
        .collect())
}

/// Logits over the full grid, `[n*n, n]`.
pub fn grid_logits(model: &Model) -> Result<Tensor, ModnetError> {
    let n = model.modulus;
    let mut wiring = model.wiring(n * n, WiringMode::Evaluation)?;
    let a: Vec<usize> = (0..n * n).map(|k| k / n).collect();
    let b: Vec<usize> = (0..n * n).map(|k| k % n).collect();
    wiring.run_pairs(&model.params, &a, &b)?;
    Ok(wiring.logits().clone())
}
