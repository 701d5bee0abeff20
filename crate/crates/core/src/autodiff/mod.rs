//! Minimal reverse-mode automatic differentiation over dense `f64` tensors,
//! plus the Adam optimizer used to train every architecture.
//!
//! The primitive set is small on purpose: matmul (plain, shared-weight and
//! batched), add, scale, relu, softmax, cross-entropy with logits, concat,
//! mean over positions, embedding gather and reshape.

mod adam;
mod gemm;
mod graph;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;

pub(crate) use gemm::gemm;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("shape mismatch at node `{node}`: {detail}")]
    ShapeMismatch { node: String, detail: String },
    #[error("expected {expected} input feeds, got {got}")]
    FeedCount { expected: usize, got: usize },
    #[error("backward called before forward")]
    BackwardBeforeForward,
    #[error("loss node `{node}` is not scalar (shape {shape:?})")]
    NonScalarLoss { node: String, shape: Vec<usize> },
    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: usize },
    #[error("index {value} out of range [0, {bound}) at node `{node}`")]
    BadIndex { node: String, value: f64, bound: usize },
}

/// Maximum relative error between the analytic gradient of a scalar node and
/// central finite differences, probing `probes` coordinates per input (all of
/// them when `probes` is `None`).
///
/// `feeds` are perturbed in place one coordinate at a time; only inputs
/// declared with `requires_grad` are probed. The relative error of a
/// coordinate is `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
pub fn gradient_check(
    graph: &mut Graph,
    loss: NodeId,
    feeds: &mut [Tensor],
    step: f64,
    probes: Option<usize>,
    floor: f64,
) -> Result<f64, AutodiffError> {
    let refs: Vec<&Tensor> = feeds.iter().collect();
    graph.forward(&refs)?;
    graph.backward(loss)?;
    let inputs = graph.inputs().to_vec();
    let analytic: Vec<Option<Tensor>> = inputs.iter().map(|&id| graph.grad(id).cloned()).collect();
    let mut worst: f64 = 0.0;
    for (slot, grad) in analytic.iter().enumerate() {
        let Some(grad) = grad else { continue };
        let len = feeds[slot].len();
        let count = probes.map_or(len, |p| p.min(len));
        for probe in 0..count {
            // spread probes over the tensor deterministically
            let k = if count == len { probe } else { (probe * 7919 + 13) % len };
            let orig = feeds[slot].data()[k];
            feeds[slot].data_mut()[k] = orig + step;
            let plus = eval_scalar(graph, loss, feeds)?;
            feeds[slot].data_mut()[k] = orig - step;
            let minus = eval_scalar(graph, loss, feeds)?;
            feeds[slot].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[k];
            let denom = a.abs().max(numeric.abs()).max(floor);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

fn eval_scalar(graph: &mut Graph, node: NodeId, feeds: &[Tensor]) -> Result<f64, AutodiffError> {
    let refs: Vec<&Tensor> = feeds.iter().collect();
    graph.forward(&refs)?;
    Ok(graph.value(node).expect("evaluated").data()[0])
}
