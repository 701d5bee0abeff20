//! PCA of cluster matrices, the rank dichotomy between phase-tied and
//! phase-independent clusters, and the maps relating the torus to the disc
//! and circle.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::seeds;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("a cluster needs at least 2 neurons, got {0}")]
    TooFewNeurons(usize),
    #[error("modulus must be at least 3, got {0}")]
    ModulusTooSmall(usize),
    #[error("frequency {f} is outside 1..{n}")]
    BadFrequency { f: usize, n: usize },
    #[error("phases must be finite; custom phase list has {got} entries for {m} neurons")]
    BadPhases { got: usize, m: usize },
    #[error("noise standard deviation must be finite and non-negative")]
    BadNoise,
    #[error("matrix is zero")]
    ZeroMatrix,
    #[error("matrix has {rows} rows, expected {expected}")]
    Shape { rows: usize, expected: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PhaseMode {
    /// One phase per neuron shared by both inputs.
    Tied,
    /// Left and right phases drawn independently.
    Independent,
    /// Explicit `(left, right)` phases.
    Custom(Vec<(f64, f64)>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClusterSpec {
    pub n: usize,
    pub f: usize,
    pub m: usize,
    pub phase_mode: PhaseMode,
    pub noise_std: f64,
}

impl SyntheticClusterSpec {
    pub fn new(n: usize, f: usize, m: usize, phase_mode: PhaseMode) -> Self {
        SyntheticClusterSpec {
            n,
            f,
            m,
            phase_mode,
            noise_std: 0.0,
        }
    }
}

/// The `n^2 x m` matrix with entry `cos(t_a + l_i) + cos(t_b + r_i)` (plus
/// Gaussian noise) at row `a * n + b`, where `t_a = 2 pi f a / n`.
pub fn synthetic_cluster(spec: &SyntheticClusterSpec, seed: u64) -> Result<DMatrix<f64>, GeometryError> {
    let SyntheticClusterSpec { n, f, m, .. } = *spec;
    if m < 2 {
        return Err(GeometryError::TooFewNeurons(m));
    }
    if n < 3 {
        return Err(GeometryError::ModulusTooSmall(n));
    }
    if f == 0 || f >= n {
        return Err(GeometryError::BadFrequency { f, n });
    }
    if !(spec.noise_std.is_finite() && spec.noise_std >= 0.0) {
        return Err(GeometryError::BadNoise);
    }
    let mut rng = seeds::rng(seed, "synthetic", 0);
    let phases: Vec<(f64, f64)> = match &spec.phase_mode {
        PhaseMode::Tied => (0..m)
            .map(|_| {
                let p = rng.gen_range(0.0..TAU);
                (p, p)
            })
            .collect(),
        PhaseMode::Independent => (0..m).map(|_| (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU))).collect(),
        PhaseMode::Custom(list) => {
            if list.len() != m || list.iter().any(|(l, r)| !l.is_finite() || !r.is_finite()) {
                return Err(GeometryError::BadPhases { got: list.len(), m });
            }
            list.clone()
        }
    };
    let angle = |a: usize| TAU * (f * a % n) as f64 / n as f64;
    let mut x = DMatrix::from_fn(n * n, m, |row, i| {
        let (l, r) = phases[i];
        (angle(row / n) + l).cos() + (angle(row % n) + r).cos()
    });
    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std).map_err(|_| GeometryError::BadNoise)?;
        let mut noise = seeds::rng(seed, "synthetic-noise", 0);
        x.iter_mut().for_each(|v| *v += normal.sample(&mut noise));
    }
    Ok(x)
}

/// `(cos t_a + cos t_b, sin t_a + sin t_b)` per grid row.
pub fn disc_factor(n: usize, f: usize) -> DMatrix<f64> {
    let t = |a: usize| TAU * (f * a % n) as f64 / n as f64;
    DMatrix::from_fn(n * n, 2, |row, c| {
        let (a, b) = (t(row / n), t(row % n));
        if c == 0 {
            a.cos() + b.cos()
        } else {
            a.sin() + b.sin()
        }
    })
}

/// `(cos t_a, sin t_a, cos t_b, sin t_b)` per grid row.
pub fn torus_factor(n: usize, f: usize) -> DMatrix<f64> {
    let t = |a: usize| TAU * (f * a % n) as f64 / n as f64;
    DMatrix::from_fn(n * n, 4, |row, c| {
        let (a, b) = (t(row / n), t(row % n));
        [a.cos(), a.sin(), b.cos(), b.sin()][c]
    })
}

/// Relative Frobenius residual of the least-squares fit `x ~ v w`.
pub fn factor_fit_residual(x: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64, GeometryError> {
    if x.nrows() != v.nrows() {
        return Err(GeometryError::Shape {
            rows: x.nrows(),
            expected: v.nrows(),
        });
    }
    let norm = x.norm();
    if norm == 0.0 {
        return Err(GeometryError::ZeroMatrix);
    }
    let svd = v.clone().svd(true, true);
    let w = svd.solve(x, 1e-12).expect("both factors requested");
    Ok((x - v * w).norm() / norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Disc,
    Torus,
    Indeterminate,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Disc => "disc",
            Verdict::Torus => "torus",
            Verdict::Indeterminate => "indeterminate",
        }
    }
}

pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-8;
/// Cumulative energy the elbow rule asks of 2 or 4 components.
pub const DEFAULT_ELBOW_ENERGY: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankSignature {
    pub singular_values: Vec<f64>,
    pub tolerance: f64,
    pub numerical_rank: usize,
    pub verdict: Verdict,
}

impl RankSignature {
    /// `sigma_k / sigma_1`, zero past the end.
    pub fn ratio(&self, k: usize) -> f64 {
        self.singular_values.get(k - 1).map_or(0.0, |s| s / self.singular_values[0])
    }

    /// Disc if two components carry `energy` of the squared spectrum, else
    /// torus if four do, else indeterminate.
    pub fn elbow_verdict(&self, energy: f64) -> Verdict {
        elbow(&self.singular_values.iter().map(|s| s * s).collect::<Vec<_>>(), energy)
    }
}

fn elbow(power: &[f64], energy: f64) -> Verdict {
    let total: f64 = power.iter().sum();
    let top = |k: usize| power.iter().take(k).sum::<f64>() / total;
    if top(2) >= energy {
        Verdict::Disc
    } else if top(4) >= energy {
        Verdict::Torus
    } else {
        Verdict::Indeterminate
    }
}

/// Singular values of the uncentered matrix and the rank at `tolerance`
/// relative to the largest one.
pub fn rank_signature(x: &DMatrix<f64>, tolerance: f64) -> Result<RankSignature, GeometryError> {
    let mut sv: Vec<f64> = x.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv.first().is_none_or(|&s| s == 0.0) {
        return Err(GeometryError::ZeroMatrix);
    }
    let numerical_rank = sv.iter().filter(|&&s| s / sv[0] >= tolerance).count();
    let verdict = match numerical_rank {
        2 => Verdict::Disc,
        4 => Verdict::Torus,
        _ => Verdict::Indeterminate,
    };
    Ok(RankSignature {
        singular_values: sv,
        tolerance,
        numerical_rank,
        verdict,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaResult {
    /// Descending, one per singular value, padded with zeros up to `r`.
    pub explained_variance_ratios: Vec<f64>,
    /// `rows x r` scores of the centered rows.
    pub projections: DMatrix<f64>,
    pub component_count: usize,
    /// Set when `r` exceeded the number of nonzero components.
    pub padded: bool,
}

impl PcaResult {
    pub fn cumulative(&self, k: usize) -> f64 {
        self.explained_variance_ratios.iter().take(k).sum()
    }

    pub fn elbow_verdict(&self, energy: f64) -> Verdict {
        elbow(&self.explained_variance_ratios, energy)
    }
}

/// PCA with rows as points: columns are mean-centered, ratios are
/// `sigma_i^2 / sum sigma_j^2`, projections are onto the top `r` directions.
pub fn pca_cluster(x: &DMatrix<f64>, r: usize) -> Result<PcaResult, GeometryError> {
    if x.ncols() < 2 {
        return Err(GeometryError::TooFewNeurons(x.ncols()));
    }
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let svd = centered.clone().svd(false, true);
    let v_t = svd.v_t.expect("right vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let power: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].powi(2)).collect();
    let total: f64 = power.iter().sum();
    if total == 0.0 {
        return Err(GeometryError::ZeroMatrix);
    }
    let mut ratios: Vec<f64> = power.iter().map(|p| p / total).collect();
    let nonzero = ratios.iter().filter(|&&v| v > 1e-15).count();
    let padded = r > nonzero;
    if ratios.len() < r {
        ratios.resize(r, 0.0);
    }
    let mut projections = DMatrix::zeros(x.nrows(), r);
    for (k, &i) in order.iter().take(r).enumerate() {
        let dir = v_t.row(i).transpose();
        projections.set_column(k, &(&centered * dir));
    }
    Ok(PcaResult {
        explained_variance_ratios: ratios,
        projections,
        component_count: r,
        padded,
    })
}

/// `(x1 x3 - x2 x4, x1 x4 + x2 x3)`: the product of two unit circles read as
/// complex numbers, so angles add.
pub fn torus_to_circle(x: [f64; 4]) -> [f64; 2] {
    [x[0] * x[2] - x[1] * x[3], x[0] * x[3] + x[1] * x[2]]
}

pub fn disc_projection(x: [f64; 4]) -> [f64; 2] {
    [x[0] + x[2], x[1] + x[3]]
}

pub fn tensor_to_matrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.last_dim(), t.data())
}

/// `a,b,pc1..pcr,label` with `label = (d a + d b) mod n`.
pub fn pca_csv(pca: &PcaResult, n: usize, d: usize) -> String {
    let r = pca.component_count;
    let mut out = String::from("a,b");
    for k in 1..=r {
        out.push_str(&format!(",pc{k}"));
    }
    out.push_str(",label\n");
    for row in 0..pca.projections.nrows() {
        let (a, b) = (row / n, row % n);
        out.push_str(&format!("{a},{b}"));
        for k in 0..r {
            out.push_str(&format!(",{:.8}", pca.projections[(row, k)]));
        }
        out.push_str(&format!(",{}\n", (d * a + d * b) % n));
    }
    out
}

/// Outcome of the rank-dichotomy check for one phase mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    pub mode: String,
    pub trials: usize,
    pub passes: usize,
    /// Largest `sigma_{r+1} / sigma_1` seen, `r` being 2 or 4.
    pub worst_tail_ratio: f64,
    /// Smallest `sigma_r / sigma_1` seen.
    pub worst_signal_ratio: f64,
    /// Largest relative residual of the closed-form factor fit.
    pub worst_residual: f64,
}

/// Noiseless synthetic clusters with random frequency and 4 to 16 neurons:
/// tied phases must give rank 2 and fit the disc factor, independent phases
/// rank 4 and the torus factor.
pub fn theorem_oracle(trials: usize, n: usize, master_seed: u64) -> Result<Vec<TheoremCheck>, GeometryError> {
    let mut out = Vec::new();
    for (mode, rank) in [(PhaseMode::Tied, 2usize), (PhaseMode::Independent, 4)] {
        let name = if rank == 2 { "tied" } else { "independent" };
        let mut check = TheoremCheck {
            mode: name.to_string(),
            trials,
            passes: 0,
            worst_tail_ratio: 0.0,
            worst_signal_ratio: f64::INFINITY,
            worst_residual: 0.0,
        };
        for t in 0..trials as u64 {
            let seed = seeds::substream(master_seed, &format!("theorem/{name}"), t);
            let mut rng = seeds::rng(seed, "shape", 0);
            let f = rng.gen_range(1..=n / 2);
            let m = rng.gen_range(4..=16);
            let x = synthetic_cluster(&SyntheticClusterSpec::new(n, f, m, mode.clone()), seed)?;
            let sig = rank_signature(&x, DEFAULT_RANK_TOLERANCE)?;
            let factor = if rank == 2 { disc_factor(n, f) } else { torus_factor(n, f) };
            let residual = factor_fit_residual(&x, &factor)?;
            let (tail, signal) = (sig.ratio(rank + 1), sig.ratio(rank));
            check.worst_tail_ratio = check.worst_tail_ratio.max(tail);
            check.worst_signal_ratio = check.worst_signal_ratio.min(signal);
            check.worst_residual = check.worst_residual.max(residual);
            if tail < 1e-10 && signal > 1e-3 && residual < 1e-10 {
                check.passes += 1;
            }
        }
        out.push(check);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
