//! Quick invariant suite behind `modgeo selftest`.

use rand::Rng;

use crate::geometry;
use crate::modnets::{self, Architecture, Model, ModelConfig};
use crate::phase_stats::{self, PhaseSample};
use crate::seeds;
use crate::stat_tests::{self, SampleSet};
use crate::tda;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Runs every invariant check; none of them trains a model.
pub fn selftest(master_seed: u64) -> Vec<Check> {
    vec![
        gradients(master_seed),
        theorem(master_seed),
        mmd(master_seed),
        pad_additivity(master_seed),
        persistence(master_seed),
    ]
}

fn gradients(master_seed: u64) -> Check {
    let mut worst: f64 = 0.0;
    for arch in Architecture::ALL {
        let cfg = ModelConfig {
            embedding_dim: 6,
            hidden_width: 10,
            num_hidden_layers: 2,
            ..ModelConfig::new(arch)
        };
        for probe in 0..3 {
            let seed = seeds::substream(master_seed, &format!("selftest/grad/{arch}"), probe);
            let err = Model::init(cfg, 7, seed).and_then(|m| modnets::loss_gradient_error(&m, 4, seed));
            match err {
                Ok(e) => worst = worst.max(e),
                Err(e) => return check("gradients", false, format!("{arch}: {e}")),
            }
        }
    }
    check("gradients", worst < 1e-5, format!("worst relative error {worst:.2e}"))
}

fn theorem(master_seed: u64) -> Check {
    match geometry::theorem_oracle(100, 59, master_seed) {
        Ok(rows) => {
            let passed = rows.iter().all(|r| r.passes == r.trials);
            let detail = rows.iter().map(|r| format!("{} {}/{}", r.mode, r.passes, r.trials)).collect::<Vec<_>>().join(", ");
            check("rank dichotomy", passed, detail)
        }
        Err(e) => check("rank dichotomy", false, e.to_string()),
    }
}

fn mmd(master_seed: u64) -> Check {
    let mut rng = seeds::rng(master_seed, "selftest/mmd", 0);
    let mut draw = |count: usize| -> Vec<f64> { (0..2 * count).map(|_| rng.gen_range(0.0..59.0)).collect() };
    let (x, y) = (draw(200), draw(150));
    let result = (|| {
        let x = SampleSet::new(2, x, "x")?;
        let y = SampleSet::new(2, y, "y")?;
        let sigma = stat_tests::median_heuristic_bandwidth(&x, &y)?;
        let same = stat_tests::mmd_unbiased(&x, &x, sigma)?;
        let xy = stat_tests::mmd_unbiased(&x, &y, sigma)?;
        let yx = stat_tests::mmd_unbiased(&y, &x, sigma)?;
        Ok::<_, stat_tests::StatError>((same, xy, yx))
    })();
    match result {
        Ok((same, xy, yx)) => check(
            "mmd identity and symmetry",
            same <= 0.0 && (xy - yx).abs() <= 1e-12 * xy.abs().max(1.0),
            format!("self {same:.2e}, asymmetry {:.2e}", (xy - yx).abs()),
        ),
        Err(e) => check("mmd identity and symmetry", false, e.to_string()),
    }
}

fn pad_additivity(master_seed: u64) -> Check {
    let n = 11;
    let mut rng = seeds::rng(master_seed, "selftest/pad", 0);
    let mut draw = |count: usize| -> Vec<PhaseSample> {
        (0..count)
            .map(|neuron| PhaseSample {
                seed: 0,
                layer: 1,
                neuron,
                estimator: phase_stats::Estimator::MaxActivation,
                a: rng.gen_range(0.0..n as f64),
                b: rng.gen_range(0.0..n as f64),
            })
            .collect()
    };
    let (first, second) = (draw(40), draw(25));
    let both: Vec<PhaseSample> = first.iter().chain(&second).copied().collect();
    let merged = phase_stats::build_pad(&first, n, "x").and_then(|mut p| {
        p.merge(&phase_stats::build_pad(&second, n, "x")?)?;
        Ok(p)
    });
    match (merged, phase_stats::build_pad(&both, n, "x")) {
        (Ok(m), Ok(all)) => check("pad additivity", m.counts == all.counts, format!("{} samples", m.total_samples)),
        (Err(e), _) | (_, Err(e)) => check("pad additivity", false, e.to_string()),
    }
}

fn persistence(master_seed: u64) -> Check {
    match tda::synthetic_oracle(2, 250, tda::DEFAULT_BAR_THRESHOLD, master_seed) {
        Ok(rows) => {
            let passed = rows.iter().all(|r| r.passes == r.trials);
            let detail = rows.iter().map(|r| format!("{} {}/{}", r.shape.name(), r.passes, r.trials)).collect::<Vec<_>>().join(", ");
            check("synthetic persistence", passed, detail)
        }
        Err(e) => check("synthetic persistence", false, e.to_string()),
    }
}
