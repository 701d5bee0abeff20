//! Gradient symmetricity and distance irrelevance of trained models.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::modnets::{grid_logits, Model, ModnetError, WiringMode};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("correct logits are constant over the grid")]
    DegenerateLogits,
    #[error("every triple had a zero gradient")]
    NoValidTriples,
    #[error(transparent)]
    Model(#[from] ModnetError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    GradientSymmetricity,
    DistanceIrrelevance,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::GradientSymmetricity => "gradient_symmetricity",
            Metric::DistanceIrrelevance => "distance_irrelevance",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: Metric,
    pub architecture: String,
    pub seed: u64,
    pub mean: f64,
    pub std: f64,
    /// Triples (or difference classes) that entered the mean.
    pub count: u64,
    pub skipped: u64,
}

/// Streaming mean and population variance.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        let total = self.count + other.count;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / total as f64;
        self.m2 += other.m2 + delta * delta * (self.count as f64 * other.count as f64) / total as f64;
        self.count = total;
    }

    pub fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0).sqrt()
        }
    }
}

fn cosine(u: &[f64], v: &[f64]) -> Option<f64> {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    (nu > 0.0 && nv > 0.0).then(|| (dot / (nu * nv)).clamp(-1.0, 1.0))
}

fn embedding_rows(model: &Model, idx: &[usize]) -> Tensor {
    let e = model.param("embedding").expect("every model has an embedding");
    let d = e.last_dim();
    let data = idx.iter().flat_map(|&i| e.row(i).to_vec()).collect();
    Tensor::from_parts(vec![idx.len(), d], data)
}

/// Cosine similarity of `dQ_c/dE_a` and `dQ_c/dE_b` for each class `c` of
/// each pair, in `(pair, c)` order. `None` marks a zero gradient.
fn pair_cosines(model: &Model, a: &[usize], b: &[usize]) -> Result<Vec<Option<f64>>, MetricError> {
    let n = model.modulus;
    let batch = a.len();
    let mut w = model.wiring(batch, WiringMode::EmbeddingInputs)?;
    w.run_embeddings(&model.params, &embedding_rows(model, a), &embedding_rows(model, b))?;
    let mut out = vec![None; batch * n];
    for c in 0..n {
        let mut seed = vec![0.0; batch * n];
        for r in 0..batch {
            seed[r * n + c] = 1.0;
        }
        // each logit row depends only on its own pair, so one seed with a
        // column of ones yields every per-pair gradient at once
        w.graph
            .backward_with_seed(w.logits, Tensor::from_parts(vec![batch, n], seed))
            .map_err(ModnetError::from)?;
        let ga = w.graph.grad(w.left).expect("embedding inputs require grad");
        let gb = w.graph.grad(w.right).expect("embedding inputs require grad");
        for r in 0..batch {
            out[r * n + c] = cosine(ga.row(r), gb.row(r));
        }
    }
    Ok(out)
}

/// Mean and std of the cosine similarity over all `n^3` triples.
pub fn gradient_symmetricity(model: &Model, seed: u64) -> Result<MetricSummary, MetricError> {
    let n = model.modulus;
    // one grid row per forward pass; rows merge in a fixed order, so the
    // result does not depend on the thread count
    let rows: Vec<(RunningStats, u64)> = (0..n)
        .into_par_iter()
        .map(|a| {
            let right: Vec<usize> = (0..n).collect();
            let mut stats = RunningStats::default();
            let mut skipped = 0;
            for c in pair_cosines(model, &vec![a; n], &right)? {
                match c {
                    Some(v) => stats.push(v),
                    None => skipped += 1,
                }
            }
            Ok((stats, skipped))
        })
        .collect::<Result<_, MetricError>>()?;
    let mut stats = RunningStats::default();
    let mut skipped = 0;
    for (row, s) in &rows {
        stats.merge(row);
        skipped += s;
    }
    if stats.count == 0 {
        return Err(MetricError::NoValidTriples);
    }
    Ok(MetricSummary {
        metric: Metric::GradientSymmetricity,
        architecture: model.config.architecture.to_string(),
        seed,
        mean: stats.mean,
        std: stats.std(),
        count: stats.count,
        skipped,
    })
}

/// The same statistic over `count` triples drawn uniformly from `rng`.
pub fn gradient_symmetricity_sampled(model: &Model, count: usize, rng: &mut impl Rng) -> Result<RunningStats, MetricError> {
    let n = model.modulus;
    let mut stats = RunningStats::default();
    for _ in 0..count {
        let (a, b, c) = (rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(0..n));
        if let Some(v) = pair_cosines(model, &[a], &[b])?[c] {
            stats.push(v);
        }
    }
    Ok(stats)
}

/// `q` from a grid logit matrix `[n*n, n]`: the mean over differences `d` of
/// `std{L(i, i+d)} / std{L}` with `L(i, j)` the logit of the correct class.
pub fn distance_irrelevance_from_logits(logits: &Tensor, n: usize) -> Result<(f64, f64), MetricError> {
    let correct = |i: usize, j: usize| logits.at(i * n + j, (i + j) % n);
    let mut all = RunningStats::default();
    for i in 0..n {
        for j in 0..n {
            all.push(correct(i, j));
        }
    }
    let global = all.std();
    if global < 1e-12 {
        return Err(MetricError::DegenerateLogits);
    }
    let mut ratios = RunningStats::default();
    for d in 0..n {
        let mut s = RunningStats::default();
        for i in 0..n {
            s.push(correct(i, (i + d) % n));
        }
        ratios.push(s.std() / global);
    }
    Ok((ratios.mean, ratios.std()))
}

pub fn distance_irrelevance(model: &Model, seed: u64) -> Result<MetricSummary, MetricError> {
    let n = model.modulus;
    let (mean, std) = distance_irrelevance_from_logits(&grid_logits(model)?, n)?;
    Ok(MetricSummary {
        metric: Metric::DistanceIrrelevance,
        architecture: model.config.architecture.to_string(),
        seed,
        mean,
        std,
        count: n as u64,
        skipped: 0,
    })
}

/// `architecture,seed,metric,avg,std` rows.
pub fn metrics_csv(rows: &[MetricSummary]) -> String {
    let mut out = String::from("architecture,seed,metric,avg,std\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.10},{:.10}\n",
            r.architecture,
            r.seed,
            r.metric.name(),
            r.mean,
            r.std
        ));
    }
    out
}
