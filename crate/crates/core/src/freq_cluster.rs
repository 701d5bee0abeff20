//! Key-frequency assignment of neurons and frequency clusters.
//!
//! A neuron's heatmap is its preactivation over the `n x n` input grid. The
//! key frequency is read off the axis bins of the 2D DFT: bins `(f, 0)` and
//! `(n - f, 0)` are the DFT of the row sums, bins `(0, f)` and `(0, n - f)`
//! the DFT of the column sums.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::modnets::ActivationDump;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FreqError {
    #[error("heatmap of neuron {neuron} has no non-constant spectrum")]
    NoDominantFrequency { neuron: usize },
    #[error("heatmap has {got} values, expected {expected}")]
    BadShape { expected: usize, got: usize },
    #[error("frequency {f} outside [1, {max}] for modulus {n}")]
    BadFrequency { f: usize, n: usize, max: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuronHeatmap {
    pub neuron_index: usize,
    pub layer_index: usize,
    pub modulus: usize,
    /// Row-major `values[a * n + b]`.
    pub values: Vec<f64>,
}

impl NeuronHeatmap {
    pub fn new(neuron_index: usize, layer_index: usize, modulus: usize, values: Vec<f64>) -> Result<Self, FreqError> {
        if values.len() != modulus * modulus {
            return Err(FreqError::BadShape {
                expected: modulus * modulus,
                got: values.len(),
            });
        }
        Ok(NeuronHeatmap {
            neuron_index,
            layer_index,
            modulus,
            values,
        })
    }

    /// Builds a heatmap from an arbitrary function of `(a, b)`.
    pub fn from_fn(modulus: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let values = (0..modulus * modulus).map(|k| f(k / modulus, k % modulus)).collect();
        NeuronHeatmap {
            neuron_index: 0,
            layer_index: 0,
            modulus,
            values,
        }
    }

    /// Column `neuron` of a grid matrix (`[n*n, width]`).
    pub fn from_grid(grid: &Tensor, neuron: usize, layer_index: usize, modulus: usize) -> Self {
        let width = grid.last_dim();
        let values = (0..modulus * modulus).map(|r| grid.data()[r * width + neuron]).collect();
        NeuronHeatmap {
            neuron_index: neuron,
            layer_index,
            modulus,
            values,
        }
    }

    pub fn at(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.modulus + b]
    }

    /// Heatmap with rows pulled back through `(a, b) -> (a*d, b*d)`.
    pub fn remapped(&self, d: usize) -> NeuronHeatmap {
        let n = self.modulus;
        let values = (0..n * n)
            .map(|k| self.values[((k / n) * d % n) * n + (k % n) * d % n])
            .collect();
        NeuronHeatmap {
            values,
            ..self.clone()
        }
    }
}

/// Power in the folded axis bins for each `f` in `1..=n/2`, alongside the total
/// non-DC power.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisSpectrum {
    /// `energy[f - 1]` is the power of folded frequency `f`.
    pub energy: Vec<f64>,
    pub non_dc_energy: f64,
}

fn dft_power(signal: &[f64], k: usize) -> f64 {
    let n = signal.len();
    let (mut re, mut im) = (0.0, 0.0);
    for (t, &x) in signal.iter().enumerate() {
        let angle = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
        re += x * angle.cos();
        im += x * angle.sin();
    }
    re * re + im * im
}

pub fn axis_spectrum(heatmap: &NeuronHeatmap) -> AxisSpectrum {
    let n = heatmap.modulus;
    let mut rows = vec![0.0; n];
    let mut cols = vec![0.0; n];
    for a in 0..n {
        for b in 0..n {
            let v = heatmap.at(a, b);
            rows[a] += v;
            cols[b] += v;
        }
    }
    let energy = (1..=n / 2)
        .map(|f| {
            let once = dft_power(&rows, f) + dft_power(&cols, f);
            // (n-f, 0) mirrors (f, 0) for real input; it is the same bin when 2f = n
            if 2 * f == n {
                once
            } else {
                2.0 * once
            }
        })
        .collect();
    let sum: f64 = heatmap.values.iter().sum();
    let sq: f64 = heatmap.values.iter().map(|v| v * v).sum();
    let non_dc_energy = ((n * n) as f64 * sq - sum * sum).max(0.0);
    AxisSpectrum { energy, non_dc_energy }
}

/// Dense 2D DFT power spectrum, `power[k * n + l] = |F(k, l)|^2`.
pub fn dft2_power(heatmap: &NeuronHeatmap) -> Vec<f64> {
    let n = heatmap.modulus;
    let (cos, sin): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|t| {
            let angle = -2.0 * PI * t as f64 / n as f64;
            (angle.cos(), angle.sin())
        })
        .unzip();
    // transform along b, then along a
    let mut stage_re = vec![0.0; n * n];
    let mut stage_im = vec![0.0; n * n];
    for a in 0..n {
        for l in 0..n {
            let (mut re, mut im) = (0.0, 0.0);
            for b in 0..n {
                let v = heatmap.at(a, b);
                re += v * cos[(l * b) % n];
                im += v * sin[(l * b) % n];
            }
            stage_re[a * n + l] = re;
            stage_im[a * n + l] = im;
        }
    }
    let mut power = vec![0.0; n * n];
    for k in 0..n {
        for l in 0..n {
            let (mut re, mut im) = (0.0, 0.0);
            for a in 0..n {
                let (c, s) = (cos[(k * a) % n], sin[(k * a) % n]);
                let (xr, xi) = (stage_re[a * n + l], stage_im[a * n + l]);
                re += xr * c - xi * s;
                im += xr * s + xi * c;
            }
            power[k * n + l] = re * re + im * im;
        }
    }
    power
}

/// Key frequency and the share of non-DC power its axis bins carry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyAssignment {
    pub frequency: usize,
    pub energy_share: f64,
}

/// Folded argmax of the axis-bin power; ties go to the smaller frequency.
pub fn assign_frequency(heatmap: &NeuronHeatmap) -> Result<FrequencyAssignment, FreqError> {
    let spectrum = axis_spectrum(heatmap);
    let scale = heatmap.values.iter().map(|v| v * v).sum::<f64>() * (heatmap.modulus * heatmap.modulus) as f64;
    if spectrum.non_dc_energy <= 1e-24 * scale.max(f64::MIN_POSITIVE) || spectrum.energy.is_empty() {
        return Err(FreqError::NoDominantFrequency {
            neuron: heatmap.neuron_index,
        });
    }
    let mut best = 0;
    for (i, &e) in spectrum.energy.iter().enumerate() {
        if e > spectrum.energy[best] {
            best = i;
        }
    }
    Ok(FrequencyAssignment {
        frequency: best + 1,
        energy_share: spectrum.energy[best] / spectrum.non_dc_energy,
    })
}

pub fn key_frequency(heatmap: &NeuronHeatmap) -> Result<usize, FreqError> {
    assign_frequency(heatmap).map(|a| a.frequency)
}

pub fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Inverse of `x` modulo `m` when `gcd(x, m) = 1`.
pub fn mod_inverse(x: usize, m: usize) -> Option<usize> {
    let (mut old_r, mut r) = (x as i64 % m as i64, m as i64);
    let (mut old_s, mut s) = (1i64, 0i64);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
    }
    if old_r != 1 {
        return if m == 1 { Some(0) } else { None };
    }
    Some(old_s.rem_euclid(m as i64) as usize)
}

/// `d = (f/g)^{-1} mod (n/g)` with `g = gcd(f, n)`.
pub fn remap_factor(f: usize, n: usize) -> Result<usize, FreqError> {
    if f == 0 || f >= n {
        return Err(FreqError::BadFrequency { f, n, max: n - 1 });
    }
    let g = gcd(f, n);
    Ok(mod_inverse(f / g, n / g).expect("f/g and n/g are coprime"))
}

/// Row permutation of a `[n*n, k]` grid matrix: output row `(a, b)` is input
/// row `(a*d mod n, b*d mod n)`. For `d = f^{-1}` this takes a frequency-`f`
/// neuron to frequency 1.
pub fn remap_grid(matrix: &Tensor, d: usize, n: usize) -> Tensor {
    let width = matrix.last_dim();
    assert_eq!(matrix.rows(), n * n, "grid matrix must have n^2 rows");
    let mut out = Vec::with_capacity(matrix.len());
    for a in 0..n {
        for b in 0..n {
            let src = (a * d % n) * n + b * d % n;
            out.extend_from_slice(&matrix.data()[src * width..(src + 1) * width]);
        }
    }
    Tensor::from_parts(matrix.shape().to_vec(), out)
}

#[derive(Clone, Debug)]
pub struct NeuronCluster {
    pub key_frequency: usize,
    pub layer_index: usize,
    pub member_neurons: Vec<usize>,
    /// `[n*n, m]`; column `i` is member `i`'s flattened heatmap.
    pub matrix: Tensor,
    pub remap_factor: usize,
}

#[derive(Clone, Debug)]
pub struct Clustering {
    pub layer_index: usize,
    pub clusters: Vec<NeuronCluster>,
    pub unclustered: Vec<usize>,
    /// Per neuron; `None` for flat heatmaps.
    pub assignments: Vec<Option<FrequencyAssignment>>,
}

/// Fraction of non-DC power the argmax bins must carry for a neuron to join a
/// cluster.
pub const DEFAULT_MIN_ENERGY_SHARE: f64 = 0.5;

pub fn cluster_neurons(dump: &ActivationDump, modulus: usize, min_energy_share: f64) -> Clustering {
    cluster_grid(&dump.preactivations, dump.layer_index, modulus, min_energy_share)
}

/// Clusters the columns of a `[n*n, width]` grid matrix by key frequency.
pub fn cluster_grid(grid: &Tensor, layer_index: usize, modulus: usize, min_energy_share: f64) -> Clustering {
    let width = grid.last_dim();
    let assignments: Vec<Option<FrequencyAssignment>> = (0..width)
        .into_par_iter()
        .map(|j| assign_frequency(&NeuronHeatmap::from_grid(grid, j, layer_index, modulus)).ok())
        .collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); modulus / 2 + 1];
    let mut unclustered = Vec::new();
    for (j, a) in assignments.iter().enumerate() {
        match a {
            Some(a) if a.energy_share >= min_energy_share && a.energy_share >= 1e-9 => members[a.frequency].push(j),
            _ => unclustered.push(j),
        }
    }
    let clusters = members
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(f, member_neurons)| {
            let rows = modulus * modulus;
            let m = member_neurons.len();
            let mut data = Vec::with_capacity(rows * m);
            for r in 0..rows {
                let row = grid.row(r);
                data.extend(member_neurons.iter().map(|&j| row[j]));
            }
            NeuronCluster {
                key_frequency: f,
                layer_index,
                remap_factor: remap_factor(f, modulus).expect("1 <= f <= n/2"),
                member_neurons,
                matrix: Tensor::from_parts(vec![rows, m], data),
            }
        })
        .collect();
    Clustering {
        layer_index,
        clusters,
        unclustered,
        assignments,
    }
}

/// CSV rows `layer,frequency,size,unclustered_count,remap_factor`.
pub fn cluster_summary_csv(clusterings: &[Clustering]) -> String {
    let mut out = String::from("layer,frequency,size,unclustered_count,remap_factor\n");
    for c in clusterings {
        for cl in &c.clusters {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.layer_index,
                cl.key_frequency,
                cl.member_neurons.len(),
                c.unclustered.len(),
                cl.remap_factor
            ));
        }
    }
    out
}
