//! Per-neuron phase locations and phase alignment distributions (PADs).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::freq_cluster::{remap_factor, Clustering, FreqError, NeuronHeatmap};
use crate::modnets::ActivationDump;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseError {
    #[error("phasor sum vanishes on the {axis} axis")]
    DegeneratePhasor { axis: char },
    #[error("no phase samples")]
    EmptySamples,
    #[error("samples mix estimators")]
    MixedEstimators,
    #[error("sample location ({a}, {b}) outside the {n}x{n} grid")]
    OutOfRange { a: f64, b: f64, n: usize },
    #[error(transparent)]
    Frequency(#[from] FreqError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    MaxActivation,
    CenterOfMass,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::MaxActivation => "max",
            Estimator::CenterOfMass => "com",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSample {
    pub seed: u64,
    pub layer: usize,
    pub neuron: usize,
    pub a: f64,
    pub b: f64,
    pub estimator: Estimator,
}

impl PhaseSample {
    /// Grid cell, rounding to the nearest integer mod `n`.
    pub fn cell(&self, n: usize) -> (usize, usize) {
        let r = |x: f64| (x.round() as i64).rem_euclid(n as i64) as usize;
        (r(self.a), r(self.b))
    }
}

/// Argmax over the grid, first in row-major order on ties.
pub fn max_activation_location(heatmap: &NeuronHeatmap) -> (usize, usize) {
    let mut best = 0;
    for (k, &v) in heatmap.values.iter().enumerate() {
        if v > heatmap.values[best] {
            best = k;
        }
    }
    (best / heatmap.modulus, best % heatmap.modulus)
}

/// Circular center of mass with weights `|h(a, b)|` and angles
/// `2*pi*f^{-1}*i/n` per axis. Returns real coordinates in `[0, n)`.
pub fn circular_center_of_mass(heatmap: &NeuronHeatmap, f: usize) -> Result<(f64, f64), PhaseError> {
    let n = heatmap.modulus;
    let inv = if f == 1 { 1 } else { remap_factor(f % n, n)? };
    let mut sa = (0.0, 0.0);
    let mut sb = (0.0, 0.0);
    let mut total = 0.0;
    for a in 0..n {
        let ta = 2.0 * PI * ((inv * a) % n) as f64 / n as f64;
        for b in 0..n {
            let w = heatmap.at(a, b).abs();
            let tb = 2.0 * PI * ((inv * b) % n) as f64 / n as f64;
            sa.0 += w * ta.cos();
            sa.1 += w * ta.sin();
            sb.0 += w * tb.cos();
            sb.1 += w * tb.sin();
            total += w;
        }
    }
    let coord = |s: (f64, f64), axis: char| {
        if total == 0.0 || s.0.hypot(s.1) < 1e-12 * total {
            return Err(PhaseError::DegeneratePhasor { axis });
        }
        let mu = s.1.atan2(s.0).rem_euclid(2.0 * PI);
        // rem_euclid can return exactly n for tiny negative angles
        Ok((n as f64 * mu / (2.0 * PI)) % n as f64)
    };
    Ok((coord(sa, 'a')?, coord(sb, 'b')?))
}

/// Circular difference `min((a-b) mod n, (b-a) mod n)`.
pub fn torus_distance(a: usize, b: usize, n: usize) -> usize {
    let d = (a + n - b % n) % n;
    d.min(n - d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseAlignmentDistribution {
    pub modulus: usize,
    /// Row-major `counts[a * n + b]`.
    pub counts: Vec<u64>,
    pub total_samples: u64,
    pub estimator: Estimator,
    pub architecture: String,
}

impl PhaseAlignmentDistribution {
    pub fn empty(modulus: usize, estimator: Estimator, architecture: &str) -> Self {
        PhaseAlignmentDistribution {
            modulus,
            counts: vec![0; modulus * modulus],
            total_samples: 0,
            estimator,
            architecture: architecture.to_string(),
        }
    }

    pub fn count(&self, a: usize, b: usize) -> u64 {
        self.counts[a * self.modulus + b]
    }

    /// Adds another PAD's counts. Both must share modulus and estimator.
    pub fn merge(&mut self, other: &PhaseAlignmentDistribution) -> Result<(), PhaseError> {
        if other.estimator != self.estimator {
            return Err(PhaseError::MixedEstimators);
        }
        assert_eq!(self.modulus, other.modulus, "PAD moduli differ");
        for (x, y) in self.counts.iter_mut().zip(&other.counts) {
            *x += y;
        }
        self.total_samples += other.total_samples;
        Ok(())
    }

    pub fn log_density(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| (1.0 + c as f64).ln()).collect()
    }

    /// `hist[d]` counts samples at torus distance `d`, for `d` in `0..=n/2`.
    pub fn distance_histogram(&self) -> Vec<u64> {
        let n = self.modulus;
        let mut hist = vec![0; n / 2 + 1];
        for a in 0..n {
            for b in 0..n {
                hist[torus_distance(a, b, n)] += self.count(a, b);
            }
        }
        hist
    }

    /// Fraction of samples at torus distance at most `d`.
    pub fn fraction_within(&self, d: usize) -> f64 {
        if self.total_samples == 0 {
            return 0.0;
        }
        let within: u64 = self.distance_histogram().iter().take(d + 1).sum();
        within as f64 / self.total_samples as f64
    }

    /// Lower median of the torus distances of all samples.
    pub fn median_distance(&self) -> Option<usize> {
        if self.total_samples == 0 {
            return None;
        }
        let target = self.total_samples.div_ceil(2);
        let mut seen = 0;
        for (d, c) in self.distance_histogram().into_iter().enumerate() {
            seen += c;
            if seen >= target {
                return Some(d);
            }
        }
        None
    }

    /// All cells as `a,b,count`.
    pub fn to_csv(&self) -> String {
        let n = self.modulus;
        let mut out = String::from("a,b,count\n");
        for a in 0..n {
            for b in 0..n {
                out.push_str(&format!("{a},{b},{}\n", self.count(a, b)));
            }
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("distance,count\n");
        for (d, c) in self.distance_histogram().iter().enumerate() {
            out.push_str(&format!("{d},{c}\n"));
        }
        out
    }

    /// Parses the output of [`to_csv`](Self::to_csv).
    pub fn from_csv(text: &str, estimator: Estimator, architecture: &str) -> Result<Self, PhaseError> {
        let rows: Vec<(usize, usize, u64)> = text
            .lines()
            .skip(1)
            .filter(|l| !l.is_empty())
            .filter_map(|l| {
                let mut it = l.split(',');
                Some((it.next()?.parse().ok()?, it.next()?.parse().ok()?, it.next()?.parse().ok()?))
            })
            .collect();
        let n = (rows.len() as f64).sqrt().round() as usize;
        if n == 0 || n * n != rows.len() {
            return Err(PhaseError::EmptySamples);
        }
        let mut pad = PhaseAlignmentDistribution::empty(n, estimator, architecture);
        for (a, b, c) in rows {
            if a >= n || b >= n {
                return Err(PhaseError::OutOfRange {
                    a: a as f64,
                    b: b as f64,
                    n,
                });
            }
            pad.counts[a * n + b] = c;
            pad.total_samples += c;
        }
        Ok(pad)
    }
}

pub fn build_pad(samples: &[PhaseSample], n: usize, architecture: &str) -> Result<PhaseAlignmentDistribution, PhaseError> {
    let first = samples.first().ok_or(PhaseError::EmptySamples)?;
    let mut pad = PhaseAlignmentDistribution::empty(n, first.estimator, architecture);
    for s in samples {
        if s.estimator != first.estimator {
            return Err(PhaseError::MixedEstimators);
        }
        let in_range = |x: f64| x.is_finite() && x > -0.5 && x < n as f64;
        if !in_range(s.a) || !in_range(s.b) {
            return Err(PhaseError::OutOfRange { a: s.a, b: s.b, n });
        }
        let (a, b) = s.cell(n);
        pad.counts[a * n + b] += 1;
        pad.total_samples += 1;
    }
    Ok(pad)
}

/// Both phase estimates for every clustered neuron of one layer.
///
/// Heatmaps are remapped to frequency 1 first. The max-activation estimate
/// uses preactivations; the center of mass uses ReLU outputs, since the
/// absolute value of a sinusoid has no first harmonic.
pub fn phase_samples(clustering: &Clustering, dump: &ActivationDump, modulus: usize, seed: u64) -> (Vec<PhaseSample>, Vec<PhaseSample>) {
    let mut max_samples = Vec::new();
    let mut com_samples = Vec::new();
    for cluster in &clustering.clusters {
        for &neuron in &cluster.member_neurons {
            let pre = NeuronHeatmap::from_grid(&dump.preactivations, neuron, dump.layer_index, modulus)
                .remapped(cluster.remap_factor);
            let (a, b) = max_activation_location(&pre);
            let sample = |a: f64, b: f64, estimator| PhaseSample {
                seed,
                layer: dump.layer_index,
                neuron,
                a,
                b,
                estimator,
            };
            max_samples.push(sample(a as f64, b as f64, Estimator::MaxActivation));
            let post = NeuronHeatmap::from_grid(&dump.postactivations, neuron, dump.layer_index, modulus)
                .remapped(cluster.remap_factor);
            if let Ok((a, b)) = circular_center_of_mass(&post, 1) {
                com_samples.push(sample(a, b, Estimator::CenterOfMass));
            }
        }
    }
    (max_samples, com_samples)
}

/// `seed,layer,neuron,estimator,a,b` rows.
pub fn samples_csv(samples: &[PhaseSample]) -> String {
    let mut out = String::from("seed,layer,neuron,estimator,a,b\n");
    for s in samples {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.seed,
            s.layer,
            s.neuron,
            s.estimator.name(),
            s.a,
            s.b
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const N: usize = 59;

    fn simple(f: usize, pl: f64, pr: f64) -> NeuronHeatmap {
        NeuronHeatmap::from_fn(N, |a, b| {
            (2.0 * PI * (f * a) as f64 / N as f64 + pl).cos() + (2.0 * PI * (f * b) as f64 / N as f64 + pr).cos()
        })
    }

    #[test]
    fn single_peak() {
        let h = NeuronHeatmap::from_fn(N, |a, b| if (a, b) == (10, 10) { 1.0 } else { 0.0 });
        assert_eq!(max_activation_location(&h), (10, 10));
    }

    #[test]
    fn zero_phase_peaks_at_origin() {
        assert_eq!(max_activation_location(&simple(1, 0.0, 0.0)), (0, 0));
    }

    #[test]
    fn opposite_phase_displaces_b_by_half() {
        let (a, b) = max_activation_location(&simple(1, 0.0, PI));
        assert_eq!(a, 0);
        assert_eq!(torus_distance(a, b, N), N / 2);
    }

    #[test]
    fn ties_break_lexicographically() {
        let h = NeuronHeatmap::from_fn(N, |_, _| 1.0);
        assert_eq!(max_activation_location(&h), (0, 0));
    }

    #[test]
    fn center_of_mass_examples() {
        let point = NeuronHeatmap::from_fn(N, |a, b| if (a, b) == (7, 40) { 2.0 } else { 0.0 });
        let (a, b) = circular_center_of_mass(&point, 1).unwrap();
        assert!((a - 7.0).abs() < 1e-9 && (b - 40.0).abs() < 1e-9);
        let rows = NeuronHeatmap::from_fn(N, |a, b| if (a == 0 || a == 2) && b == 5 { 1.0 } else { 0.0 });
        let (a, _) = circular_center_of_mass(&rows, 1).unwrap();
        assert!((a - 1.0).abs() < 1e-9);
        let uniform = NeuronHeatmap::from_fn(N, |_, _| 1.0);
        assert!(matches!(
            circular_center_of_mass(&uniform, 1),
            Err(PhaseError::DegeneratePhasor { .. })
        ));
    }

    #[test]
    fn center_of_mass_uses_inverse_frequency_angles() {
        // a point at i sits at angle 2*pi*f^{-1}*i/n, so the result is f^{-1}*i mod n
        let point = NeuronHeatmap::from_fn(N, |a, b| if (a, b) == (3, 3) { 1.0 } else { 0.0 });
        let inv = remap_factor(2, N).unwrap();
        let (a, _) = circular_center_of_mass(&point, 2).unwrap();
        assert!((a - ((inv * 3) % N) as f64).abs() < 1e-9);
    }

    #[test]
    fn torus_distance_examples() {
        assert_eq!(torus_distance(3, 5, N), 2);
        assert_eq!(torus_distance(58, 1, N), 2);
        for k in 0..N {
            assert_eq!(torus_distance(k, k, N), 0);
        }
    }

    #[test]
    fn pad_accumulates() {
        let s = PhaseSample {
            seed: 0,
            layer: 0,
            neuron: 0,
            a: 0.0,
            b: 0.0,
            estimator: Estimator::MaxActivation,
        };
        let pad = build_pad(&vec![s; 10], N, "MlpAdd").unwrap();
        assert_eq!(pad.count(0, 0), 10);
        assert_eq!(pad.counts.iter().sum::<u64>(), 10);
        assert_eq!(pad.fraction_within(0), 1.0);
        assert!(build_pad(&[], N, "MlpAdd").is_err());
        let mixed = [s, PhaseSample { estimator: Estimator::CenterOfMass, ..s }];
        assert_eq!(build_pad(&mixed, N, "x"), Err(PhaseError::MixedEstimators));
        // 58.7 rounds to 59 = 0 mod n
        let wrap = PhaseSample { a: 58.7, b: 3.2, ..s };
        assert_eq!(build_pad(&[wrap], N, "x").unwrap().count(0, 3), 1);
        let round_trip = PhaseAlignmentDistribution::from_csv(&pad.to_csv(), Estimator::MaxActivation, "MlpAdd").unwrap();
        assert_eq!(round_trip, pad);
    }

    #[test]
    fn merged_counts_are_additive() {
        let mk = |a: f64, b: f64| PhaseSample {
            seed: 0,
            layer: 0,
            neuron: 0,
            a,
            b,
            estimator: Estimator::CenterOfMass,
        };
        let mut x = build_pad(&[mk(1.0, 2.0), mk(3.0, 3.0)], N, "A").unwrap();
        let y = build_pad(&[mk(1.0, 2.0)], N, "A").unwrap();
        x.merge(&y).unwrap();
        assert_eq!(x.count(1, 2), 2);
        assert_eq!(x.total_samples, 3);
        assert_eq!(x.distance_histogram()[1], 2);
        assert_eq!(x.median_distance(), Some(1));
    }

    #[test]
    fn equal_phase_simple_neuron_lands_on_diagonal_after_remap() {
        for f in [1, 5, 23] {
            let h = simple(f, 1.3, 1.3).remapped(remap_factor(f, N).unwrap());
            let (a, b) = max_activation_location(&h);
            assert_eq!(a, b);
        }
    }

    proptest! {
        #[test]
        fn torus_distance_properties(a in 0usize..N, b in 0usize..N, k in 0usize..N) {
            prop_assert_eq!(torus_distance(a, b, N), torus_distance(b, a, N));
            prop_assert_eq!(torus_distance(a, b, N), torus_distance((a + k) % N, (b + k) % N, N));
            prop_assert_eq!(torus_distance(a, b, N) == 0, a == b);
        }

        #[test]
        fn center_of_mass_is_shift_equivariant(seed in 0u64..500, s in 0usize..N, t in 0usize..N) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // a bump plus noise keeps the phasors away from zero
            let (ca, cb) = (rng.gen_range(0..N), rng.gen_range(0..N));
            let noise: Vec<f64> = (0..N * N).map(|_| rng.gen_range(0.0..0.2)).collect();
            let h = NeuronHeatmap::from_fn(N, |a, b| {
                let d = torus_distance(a, ca, N).pow(2) + torus_distance(b, cb, N).pow(2);
                (-(d as f64) / 20.0).exp() + noise[a * N + b]
            });
            let shifted = NeuronHeatmap::from_fn(N, |a, b| h.at((a + N - s) % N, (b + N - t) % N));
            let (a0, b0) = circular_center_of_mass(&h, 1).unwrap();
            let (a1, b1) = circular_center_of_mass(&shifted, 1).unwrap();
            let circ = |x: f64, y: f64| { let d = (x - y).rem_euclid(N as f64); d.min(N as f64 - d) };
            prop_assert!(circ(a1, a0 + s as f64) < 1e-7);
            prop_assert!(circ(b1, b0 + t as f64) < 1e-7);
        }
    }
}
