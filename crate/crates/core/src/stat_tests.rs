//! Gaussian-kernel MMD two-sample tests with permutation p-values.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::gemm;
use crate::phase_stats::PhaseAlignmentDistribution;
use crate::seeds;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatError {
    #[error("points have inconsistent dimension or non-finite values")]
    InvalidSamples,
    #[error("sample sets have dimensions {0} and {1}")]
    DimensionMismatch(usize, usize),
    #[error("need at least {need} points per sample, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("all pooled points coincide; bandwidth undefined")]
    DegenerateBandwidth,
    #[error("empty PAD")]
    EmptyDistribution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub dim: usize,
    /// Row-major, `len / dim` points.
    pub points: Vec<f64>,
    pub label: String,
}

impl SampleSet {
    pub fn new(dim: usize, points: Vec<f64>, label: &str) -> Result<Self, StatError> {
        if dim == 0 || !points.len().is_multiple_of(dim) || points.iter().any(|v| !v.is_finite()) {
            return Err(StatError::InvalidSamples);
        }
        Ok(SampleSet {
            dim,
            points,
            label: label.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
}

fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn pooled<'a>(x: &'a SampleSet, y: &'a SampleSet) -> Result<Vec<&'a [f64]>, StatError> {
    if x.dim != y.dim {
        return Err(StatError::DimensionMismatch(x.dim, y.dim));
    }
    Ok((0..x.len()).map(|i| x.point(i)).chain((0..y.len()).map(|i| y.point(i))).collect())
}

/// Lower median of the pooled pairwise distances `i < j`. If more than half
/// the pairs coincide, the median of the nonzero distances is used instead.
pub fn median_heuristic_bandwidth(x: &SampleSet, y: &SampleSet) -> Result<f64, StatError> {
    let pts = pooled(x, y)?;
    if pts.len() < 2 {
        return Err(StatError::TooFewPoints { need: 2, got: pts.len() });
    }
    let mut d: Vec<f64> = (0..pts.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let pts = &pts;
            (i + 1..pts.len()).map(move |j| sq_dist(pts[i], pts[j]))
        })
        .collect();
    let lower_median = |v: &mut Vec<f64>| {
        let k = (v.len() - 1) / 2;
        *v.select_nth_unstable_by(k, f64::total_cmp).1
    };
    let mut m = lower_median(&mut d);
    if m == 0.0 {
        d.retain(|&v| v > 0.0);
        if d.is_empty() {
            return Err(StatError::DegenerateBandwidth);
        }
        m = lower_median(&mut d);
    }
    Ok(m.sqrt())
}

fn kernel_matrix(pts: &[&[f64]], sigma: f64) -> Vec<f64> {
    let n = pts.len();
    let scale = -1.0 / (2.0 * sigma * sigma);
    let mut k = vec![0.0; n * n];
    k.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (scale * sq_dist(pts[i], pts[j])).exp();
        }
    });
    k
}

/// Unbiased MMD^2 from block sums of a pooled kernel matrix whose unit
/// diagonal is included in `sxx_full` and `syy_full`.
fn mmd_from_sums(sxx_full: f64, syy_full: f64, sxy: f64, m: usize, n: usize) -> f64 {
    let (mf, nf) = (m as f64, n as f64);
    (sxx_full - mf) / (mf * (mf - 1.0)) + (syy_full - nf) / (nf * (nf - 1.0)) - 2.0 * sxy / (mf * nf)
}

/// U-statistic estimate of MMD^2 with kernel `exp(-|u-v|^2 / (2 sigma^2))`.
pub fn mmd_unbiased(x: &SampleSet, y: &SampleSet, sigma: f64) -> Result<f64, StatError> {
    for s in [x, y] {
        if s.len() < 2 {
            return Err(StatError::TooFewPoints { need: 2, got: s.len() });
        }
    }
    let pts = pooled(x, y)?;
    let k = kernel_matrix(&pts, sigma);
    let (m, total) = (x.len(), pts.len());
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for i in 0..total {
        let row = &k[i * total..(i + 1) * total];
        let left: f64 = row[..m].iter().sum();
        let right: f64 = row[m..].iter().sum();
        if i < m {
            sxx += left;
            sxy += right;
        } else {
            syy += right;
        }
    }
    Ok(mmd_from_sums(sxx, syy, sxy, m, total - m))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleResult {
    pub mmd_squared: f64,
    pub bandwidth: f64,
    pub p_value: f64,
    pub permutations: usize,
    pub warning: Option<String>,
}

/// Permutations evaluated per kernel-matrix product.
const PERMUTATION_BLOCK: usize = 128;

/// Label-permutation test of `mmd_unbiased` at the pooled median bandwidth.
///
/// Permutation `p` draws from the `permutation` substream `p` of `seed`, so
/// the p-value does not depend on the thread count.
pub fn permutation_test(x: &SampleSet, y: &SampleSet, permutations: usize, seed: u64) -> Result<TwoSampleResult, StatError> {
    for s in [x, y] {
        if s.len() < 2 {
            return Err(StatError::TooFewPoints { need: 2, got: s.len() });
        }
    }
    let sigma = median_heuristic_bandwidth(x, y)?;
    let pts = pooled(x, y)?;
    let total = pts.len();
    let m = x.len();
    let k = kernel_matrix(&pts, sigma);
    let row_sums: Vec<f64> = k.par_chunks(total).map(|r| r.iter().sum()).collect();
    let grand: f64 = row_sums.iter().sum();
    // with z the indicator of the X block: Sxx = z'Kz, Sxy = z'K1 - z'Kz,
    // Syy = 1'K1 - 2 z'K1 + z'Kz
    let statistic = |zkz: f64, zk1: f64| mmd_from_sums(zkz, grand - 2.0 * zk1 + zkz, zk1 - zkz, m, total - m);
    let observed = {
        let zk1: f64 = row_sums[..m].iter().sum();
        let zkz: f64 = k.chunks(total).take(m).map(|r| r[..m].iter().sum::<f64>()).sum();
        statistic(zkz, zk1)
    };
    let blocks: Vec<usize> = (0..permutations.div_ceil(PERMUTATION_BLOCK)).collect();
    let exceed: usize = blocks
        .into_par_iter()
        .map(|block| {
            let start = block * PERMUTATION_BLOCK;
            let width = PERMUTATION_BLOCK.min(permutations - start);
            // z is total x width, one column per permutation
            let mut z = vec![0.0; total * width];
            let mut idx: Vec<usize> = (0..total).collect();
            for c in 0..width {
                let mut rng = seeds::rng(seed, "permutation", (start + c) as u64);
                idx.sort_unstable();
                idx.shuffle(&mut rng);
                for &i in &idx[..m] {
                    z[i * width + c] = 1.0;
                }
            }
            let mut kz = vec![0.0; total * width];
            gemm(total, total, width, &k, false, &z, false, &mut kz, false);
            (0..width)
                .filter(|&c| {
                    let (mut zkz, mut zk1) = (0.0, 0.0);
                    for i in 0..total {
                        if z[i * width + c] != 0.0 {
                            zkz += kz[i * width + c];
                            zk1 += row_sums[i];
                        }
                    }
                    statistic(zkz, zk1) >= observed
                })
                .count()
        })
        .sum();
    Ok(TwoSampleResult {
        mmd_squared: observed,
        bandwidth: sigma,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        permutations,
        warning: (permutations < 100).then(|| format!("only {permutations} permutations; p-value is coarse")),
    })
}

/// Draws `count` grid points from a PAD with replacement, optionally
/// jittering each coordinate by uniform noise in `(-0.5, 0.5)`.
pub fn sample_pad(pad: &PhaseAlignmentDistribution, count: usize, jitter: bool, rng: &mut impl Rng) -> Result<SampleSet, StatError> {
    if pad.total_samples == 0 {
        return Err(StatError::EmptyDistribution);
    }
    let n = pad.modulus;
    let mut cumulative = Vec::with_capacity(pad.counts.len());
    let mut acc = 0u64;
    for &c in &pad.counts {
        acc += c;
        cumulative.push(acc);
    }
    let mut points = Vec::with_capacity(2 * count);
    for _ in 0..count {
        let r = rng.gen_range(0..acc);
        let cell = cumulative.partition_point(|&c| c <= r);
        let (mut a, mut b) = ((cell / n) as f64, (cell % n) as f64);
        if jitter {
            a += rng.gen_range(-0.5..0.5);
            b += rng.gen_range(-0.5..0.5);
        }
        points.extend([a, b]);
    }
    SampleSet::new(2, points, &pad.architecture)
}

/// `comparison,mmd,p_value,bandwidth,permutations` rows.
pub fn results_csv(rows: &[(String, TwoSampleResult)]) -> String {
    let mut out = String::from("comparison,mmd,p_value,bandwidth,permutations\n");
    for (name, r) in rows {
        out.push_str(&format!(
            "{name},{:.6e},{:.6e},{:.6e},{}\n",
            r.mmd_squared, r.p_value, r.bandwidth, r.permutations
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(points: &[f64], dim: usize) -> SampleSet {
        SampleSet::new(dim, points.to_vec(), "t").unwrap()
    }

    fn gaussian(count: usize, shift: f64, seed: u64) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..2 * count)
            .map(|_| {
                // Box-Muller
                let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                let v: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos() + shift
            })
            .collect();
        SampleSet::new(2, pts, "g").unwrap()
    }

    /// Direct definition, used as the oracle.
    fn naive_mmd(x: &SampleSet, y: &SampleSet, sigma: f64) -> f64 {
        let k = |u: &[f64], v: &[f64]| (-sq_dist(u, v) / (2.0 * sigma * sigma)).exp();
        let (m, n) = (x.len(), y.len());
        let mut xx = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    xx += k(x.point(i), x.point(j));
                }
            }
        }
        let mut yy = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    yy += k(y.point(i), y.point(j));
                }
            }
        }
        let mut xy = 0.0;
        for i in 0..m {
            for j in 0..n {
                xy += k(x.point(i), y.point(j));
            }
        }
        xx / (m * (m - 1)) as f64 + yy / (n * (n - 1)) as f64 - 2.0 * xy / (m * n) as f64
    }

    #[test]
    fn bandwidth_examples() {
        assert_eq!(median_heuristic_bandwidth(&set(&[0.0], 1), &set(&[1.0], 1)).unwrap(), 1.0);
        assert_eq!(median_heuristic_bandwidth(&set(&[0.0, 1.0], 1), &set(&[3.0], 1)).unwrap(), 2.0);
        assert_eq!(
            median_heuristic_bandwidth(&set(&[2.0, 2.0], 1), &set(&[2.0], 1)),
            Err(StatError::DegenerateBandwidth)
        );
    }

    #[test]
    fn identical_samples_give_nonpositive_mmd() {
        let x = gaussian(50, 0.0, 1);
        assert!(mmd_unbiased(&x, &x, 1.0).unwrap() <= 0.0);
    }

    #[test]
    fn separated_point_masses() {
        let x = set(&[0.0; 20], 1);
        let y = set(&[100.0; 20], 1);
        let v = mmd_unbiased(&x, &y, 1.0).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn block_sums_match_naive_definition() {
        let x = gaussian(30, 0.0, 2);
        let y = gaussian(41, 0.5, 3);
        let fast = mmd_unbiased(&x, &y, 0.8).unwrap();
        assert!((fast - naive_mmd(&x, &y, 0.8)).abs() < 1e-12);
    }

    #[test]
    fn permutation_statistic_matches_direct_estimate() {
        let x = gaussian(40, 0.0, 4);
        let y = gaussian(25, 1.0, 5);
        let r = permutation_test(&x, &y, 10, 0).unwrap();
        let sigma = median_heuristic_bandwidth(&x, &y).unwrap();
        assert!((r.mmd_squared - mmd_unbiased(&x, &y, sigma).unwrap()).abs() < 1e-12);
        assert_eq!(r.bandwidth, sigma);
        assert!(r.warning.is_some());
    }

    #[test]
    fn distant_masses_reach_maximal_significance() {
        let x = set(&vec![0.0; 1000], 1);
        let y = set(&vec![10.0; 1000], 1);
        let r = permutation_test(&x, &y, 200, 7).unwrap();
        assert_eq!(r.p_value, 1.0 / 201.0);
        assert!(r.warning.is_none());
    }

    #[test]
    fn permutation_counting_matches_explicit_loop() {
        let x = gaussian(12, 0.0, 6);
        let y = gaussian(9, 0.3, 7);
        let r = permutation_test(&x, &y, 300, 11).unwrap();
        let sigma = r.bandwidth;
        let pooled: Vec<f64> = x.points.iter().chain(&y.points).copied().collect();
        let mut exceed = 0;
        for p in 0..300u64 {
            let mut idx: Vec<usize> = (0..21).collect();
            idx.shuffle(&mut seeds::rng(11, "permutation", p));
            let take = |ids: &[usize]| {
                let pts: Vec<f64> = ids.iter().flat_map(|&i| pooled[2 * i..2 * i + 2].to_vec()).collect();
                set(&pts, 2)
            };
            if naive_mmd(&take(&idx[..12]), &take(&idx[12..]), sigma) >= r.mmd_squared - 1e-12 {
                exceed += 1;
            }
        }
        assert_eq!(r.p_value, (1 + exceed) as f64 / 301.0);
    }

    #[test]
    fn calibrated_under_the_null() {
        let rejections = (0..20)
            .filter(|&rep| {
                let x = gaussian(100, 0.0, 1000 + rep);
                let y = gaussian(100, 0.0, 2000 + rep);
                permutation_test(&x, &y, 500, rep).unwrap().p_value < 0.05
            })
            .count();
        assert!(rejections <= 3, "{rejections} of 20 rejected");
    }

    #[test]
    fn pad_sampling_respects_counts() {
        let mut pad = PhaseAlignmentDistribution::empty(5, crate::phase_stats::Estimator::MaxActivation, "x");
        pad.counts[2 * 5 + 3] = 3;
        pad.counts[4 * 5] = 1;
        pad.total_samples = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_pad(&pad, 4000, false, &mut rng).unwrap();
        let hits = (0..s.len()).filter(|&i| s.point(i) == [2.0, 3.0]).count();
        assert!((hits as f64 / 4000.0 - 0.75).abs() < 0.03);
        assert!((0..s.len()).all(|i| s.point(i) == [2.0, 3.0] || s.point(i) == [4.0, 0.0]));
        let j = sample_pad(&pad, 100, true, &mut rng).unwrap();
        assert!((0..j.len()).all(|i| {
            let p = j.point(i);
            ((p[0] - 2.0).abs() < 0.5 && (p[1] - 3.0).abs() < 0.5) || ((p[0] - 4.0).abs() < 0.5 && p[1].abs() < 0.5)
        }));
        assert!(sample_pad(&PhaseAlignmentDistribution::empty(5, pad.estimator, "x"), 1, true, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn mmd_is_symmetric_and_order_invariant(seed in 0u64..200, m in 2usize..15, n in 2usize..15) {
            let x = gaussian(m, 0.0, seed);
            let y = gaussian(n, 0.4, seed + 1000);
            let xy = mmd_unbiased(&x, &y, 1.3).unwrap();
            let yx = mmd_unbiased(&y, &x, 1.3).unwrap();
            prop_assert!((xy - yx).abs() < 1e-12);
            let mut rev: Vec<f64> = Vec::new();
            for i in (0..x.len()).rev() {
                rev.extend_from_slice(x.point(i));
            }
            let xr = SampleSet::new(2, rev, "r").unwrap();
            prop_assert!((mmd_unbiased(&xr, &y, 1.3).unwrap() - xy).abs() < 1e-12);
        }

        #[test]
        fn p_values_are_bounded(seed in 0u64..50) {
            let r = permutation_test(&gaussian(8, 0.0, seed), &gaussian(8, 0.2, seed + 1), 120, seed).unwrap();
            prop_assert!(r.p_value >= 1.0 / 121.0 && r.p_value <= 1.0);
        }
    }
}
