//! Cross-seed tables: merged PADs, MMD comparisons, Betti distributions,
//! metric scatter data, PCA verdicts, training times and the synthetic
//! oracles.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::analyze::{betti_rows_csv, load_rows, pca_summary_csv, BettiRow, PcaRow, RunRows};
use super::{hash_json, load_run, load_timing, Analysis, ExperimentPlan, OrchestratorError, RunStore};
use crate::circuit_metrics::{self, Metric, MetricSummary};
use crate::geometry::{self, TheoremCheck};
use crate::modnets::Architecture;
use crate::phase_stats::{self, Estimator, PhaseAlignmentDistribution, PhaseSample};
use crate::seeds;
use crate::stat_tests::{self, TwoSampleResult};
use crate::tda::{self, BettiDistribution, ShapeCheck};

pub const AGGREGATE_DIR: &str = "aggregate";
/// Trials per phase mode in the rank-dichotomy oracle.
pub const THEOREM_TRIALS: usize = 100;
/// Seeds per shape in the synthetic persistence oracle.
pub const TDA_ORACLE_TRIALS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PadSummary {
    pub architecture: Architecture,
    pub estimator: Estimator,
    pub runs: usize,
    pub samples: u64,
    pub within2: f64,
    pub within5: f64,
    pub median: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub architecture: Architecture,
    pub seed: u64,
    pub epochs: usize,
    /// Wall-clock time, kept out of the deterministic tables.
    #[serde(skip)]
    pub seconds: Option<f64>,
    pub final_test_accuracy: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmdRow {
    pub first: Architecture,
    pub second: Architecture,
    pub result: TwoSampleResult,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub training: Vec<TrainingRow>,
    pub pads: Vec<PadSummary>,
    pub mmd: Vec<MmdRow>,
    pub metrics: Vec<MetricSummary>,
    pub pca: Vec<RunRows<PcaRow>>,
    pub betti: Vec<RunRows<BettiRow>>,
    pub theorem: Vec<TheoremCheck>,
    pub tda_oracle: Vec<ShapeCheck>,
    /// Runs skipped because they did not converge.
    pub unconverged: Vec<String>,
    pub gaps: Vec<Gap>,
}

/// A requested cell with nothing to aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub architecture: Architecture,
    pub seed: u64,
    pub analysis: String,
    pub reason: String,
}

#[derive(Serialize)]
struct Summary<'a> {
    config_hash: String,
    seeds: Vec<u64>,
    modulus: usize,
    aggregate: &'a Aggregate,
}

/// Leading comment line of every aggregate and report CSV.
pub fn provenance(plan: &ExperimentPlan) -> String {
    let seeds: Vec<String> = plan.seeds.iter().map(u64::to_string).collect();
    format!("# config {} seeds {}\n", plan.config_hash(), seeds.join(" "))
}

/// Drops `#` comment lines so the remainder parses as plain CSV.
pub fn strip_comments(text: &str) -> String {
    text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect()
}

fn gaps(plan: &ExperimentPlan, store: &RunStore, converged: &BTreeMap<(Architecture, u64), bool>) -> Vec<Gap> {
    let mut out = Vec::new();
    for &arch in &plan.architectures {
        for &seed in &plan.seeds {
            let gap = |analysis: &str, reason: &str| Gap {
                architecture: arch,
                seed,
                analysis: analysis.to_string(),
                reason: reason.to_string(),
            };
            match converged.get(&(arch, seed)) {
                None => {
                    out.push(gap("train", "missing"));
                    continue;
                }
                Some(false) => out.push(gap("train", "not converged")),
                Some(true) => {}
            }
            for analysis in plan.analyses.iter().filter(|a| super::PER_RUN.contains(a)) {
                let file = format!("{}/{}.json", super::analysis_dir(arch, seed), analysis.name());
                if !store.path(&file).exists() {
                    out.push(gap(analysis.name(), "missing"));
                }
            }
        }
    }
    out
}

pub fn gaps_csv(rows: &[Gap]) -> String {
    let mut out = String::from("architecture,seed,analysis,reason\n");
    for g in rows {
        out.push_str(&format!("{},{},{},{}\n", g.architecture, g.seed, g.analysis, g.reason));
    }
    out
}

impl Aggregate {
    pub fn pad(&self, arch: Architecture, estimator: Estimator) -> Option<&PadSummary> {
        self.pads.iter().find(|p| p.architecture == arch && p.estimator == estimator)
    }

    pub fn mmd_between(&self, a: Architecture, b: Architecture) -> Option<&TwoSampleResult> {
        self.mmd
            .iter()
            .find(|r| (r.first, r.second) == (a, b) || (r.first, r.second) == (b, a))
            .map(|r| &r.result)
    }

    pub fn metric(&self, arch: Architecture, seed: u64, metric: Metric) -> Option<&MetricSummary> {
        self.metrics
            .iter()
            .find(|m| m.metric == metric && m.seed == seed && m.architecture == arch.to_string())
    }

    /// Betti tallies keyed `architecture/depth/layer`.
    pub fn betti_distribution(&self, depth_of: impl Fn(Architecture) -> usize) -> BettiDistribution {
        let mut dist = BettiDistribution::default();
        for run in &self.betti {
            for row in &run.rows {
                dist.add(&betti_key(run.architecture, depth_of(run.architecture), &row.layer), row.betti);
            }
        }
        dist
    }
}

pub fn betti_key(arch: Architecture, depth: usize, layer: &str) -> String {
    format!("{arch}/{depth}/{layer}")
}

/// Builds every table the plan's analyses allow from what the store holds.
/// Only converged runs enter the per-run tables.
pub fn aggregate_stage(plan: &ExperimentPlan, store: &RunStore) -> Result<Aggregate, OrchestratorError> {
    let mut agg = Aggregate::default();
    let mut files: Vec<(String, String)> = Vec::new();
    let mut converged: BTreeMap<(Architecture, u64), bool> = BTreeMap::new();

    for &arch in &plan.architectures {
        for &seed in &plan.seeds {
            let Ok(run) = load_run(store, arch, seed) else { continue };
            converged.insert((arch, seed), run.converged);
            if !run.converged {
                agg.unconverged.push(format!("{arch}/seed-{seed}"));
            }
            agg.training.push(TrainingRow {
                architecture: arch,
                seed,
                epochs: run.trace.len(),
                seconds: load_timing(store, arch, seed).map(|t| t.seconds),
                final_test_accuracy: run.final_test_accuracy,
                converged: run.converged,
            });
        }
    }
    files.push(("training.csv".into(), training_csv(&agg.training)));
    let keep = |arch: Architecture, seed: u64| converged.get(&(arch, seed)).copied().unwrap_or(false);

    if plan.analyses.contains(&Analysis::Pad) || plan.analyses.contains(&Analysis::Mmd) {
        let runs: Vec<RunRows<PhaseSample>> = load_rows(plan, store, "pad.json");
        let mut merged: BTreeMap<(Architecture, Estimator), (usize, PhaseAlignmentDistribution)> = BTreeMap::new();
        for run in runs.iter().filter(|r| keep(r.architecture, r.seed)) {
            for estimator in [Estimator::MaxActivation, Estimator::CenterOfMass] {
                let samples: Vec<PhaseSample> = run.rows.iter().filter(|s| s.estimator == estimator).copied().collect();
                let entry = merged
                    .entry((run.architecture, estimator))
                    .or_insert_with(|| (0, PhaseAlignmentDistribution::empty(plan.modulus, estimator, &run.architecture.to_string())));
                entry.0 += 1;
                if !samples.is_empty() {
                    let pad = phase_stats::build_pad(&samples, plan.modulus, &run.architecture.to_string())
                        .map_err(|e| OrchestratorError::Config(e.to_string()))?;
                    entry.1.merge(&pad).map_err(|e| OrchestratorError::Config(e.to_string()))?;
                }
            }
        }
        for ((arch, estimator), (runs, pad)) in &merged {
            let stem = format!("pad/{arch}-{}", estimator.name());
            files.push((format!("{stem}.csv"), pad.to_csv()));
            files.push((format!("{stem}-distance.csv"), pad.histogram_csv()));
            agg.pads.push(PadSummary {
                architecture: *arch,
                estimator: *estimator,
                runs: *runs,
                samples: pad.total_samples,
                within2: pad.fraction_within(2),
                within5: pad.fraction_within(5),
                median: pad.median_distance(),
            });
        }
        files.push(("pad-summary.csv".into(), pad_summary_csv(&agg.pads)));

        if plan.analyses.contains(&Analysis::Mmd) {
            let pads: BTreeMap<Architecture, &PhaseAlignmentDistribution> = merged
                .iter()
                .filter(|((_, e), _)| *e == Estimator::MaxActivation)
                .map(|((a, _), (_, pad))| (*a, pad))
                .collect();
            agg.mmd = mmd_table(plan, store, &pads)?;
            let rows: Vec<(String, TwoSampleResult)> = agg
                .mmd
                .iter()
                .map(|r| (format!("{} vs {}", r.first, r.second), r.result.clone()))
                .collect();
            files.push(("mmd.csv".into(), stat_tests::results_csv(&rows)));
        }
    }

    if plan.analyses.contains(&Analysis::Metrics) {
        let runs: Vec<RunRows<MetricSummary>> = load_rows(plan, store, "metrics.json");
        agg.metrics = runs
            .into_iter()
            .filter(|r| keep(r.architecture, r.seed))
            .flat_map(|r| r.rows)
            .collect();
        files.push(("metrics.csv".into(), circuit_metrics::metrics_csv(&agg.metrics)));
    }

    if plan.analyses.contains(&Analysis::Pca) {
        agg.pca = load_rows(plan, store, "pca.json").into_iter().filter(|r: &RunRows<PcaRow>| keep(r.architecture, r.seed)).collect();
        files.push(("pca-summary.csv".into(), pca_summary_csv(&agg.pca)));
        files.push(("pca-verdicts.csv".into(), pca_verdicts_csv(&agg.pca)));
    }

    if plan.analyses.contains(&Analysis::Tda) {
        agg.betti = load_rows(plan, store, "tda.json").into_iter().filter(|r: &RunRows<BettiRow>| keep(r.architecture, r.seed)).collect();
        files.push(("betti-rows.csv".into(), betti_rows_csv(&agg.betti)));
        let dist = agg.betti_distribution(|a| plan.model_config(a).num_hidden_layers);
        files.push(("betti-distribution.csv".into(), dist.to_csv()));
    }

    if plan.analyses.contains(&Analysis::TheoremOracle) {
        let (theorem, shapes) = cached_oracles(plan, store)?;
        files.push(("theorem-oracle.csv".into(), theorem_csv(&theorem)));
        files.push(("tda-oracle.csv".into(), shape_checks_csv(&shapes)));
        agg.theorem = theorem;
        agg.tda_oracle = shapes;
    }

    agg.gaps = gaps(plan, store, &converged);
    files.push(("gaps.csv".into(), gaps_csv(&agg.gaps)));
    let stamp = provenance(plan);
    let summary = Summary {
        config_hash: plan.config_hash(),
        seeds: plan.seeds.clone(),
        modulus: plan.modulus,
        aggregate: &agg,
    };
    let mut files: Vec<(String, String)> = files.into_iter().map(|(rel, text)| (rel, format!("{stamp}{text}"))).collect();
    files.push(("summary.json".into(), serde_json::to_string_pretty(&summary)?));
    for (rel, text) in &files {
        store.write(&format!("{AGGREGATE_DIR}/{rel}"), text.as_bytes())?;
    }
    store.write(&format!("{AGGREGATE_DIR}/{}", super::TIMING_FILE), timing_json(&agg.training)?.as_bytes())?;
    let artifacts: Vec<String> = files.iter().map(|(rel, _)| format!("{AGGREGATE_DIR}/{rel}")).collect();
    store.record("aggregate/tables", &hash_json(&(&plan.config_hash(), &artifacts)), &artifacts)?;
    Ok(agg)
}

/// All pairs of the plan's architectures in canonical order.
fn pairs(archs: &[Architecture]) -> Vec<(Architecture, Architecture)> {
    let mut sorted = archs.to_vec();
    sorted.sort();
    let mut out = Vec::new();
    for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            out.push((sorted[i], sorted[j]));
        }
    }
    out
}

/// Pairwise permutation tests on jittered draws from the merged
/// max-activation PADs, cached on the PAD contents and settings.
fn mmd_table(
    plan: &ExperimentPlan,
    store: &RunStore,
    pads: &BTreeMap<Architecture, &PhaseAlignmentDistribution>,
) -> Result<Vec<MmdRow>, OrchestratorError> {
    let settings = plan.settings;
    let input = hash_json(&(plan.master_seed, settings.mmd_points, settings.mmd_permutations, pads));
    let rel = format!("{AGGREGATE_DIR}/mmd.json");
    if store.is_complete("aggregate/mmd", &input) {
        if let Ok(rows) = serde_json::from_str(&store.read_string(&rel)?) {
            return Ok(rows);
        }
    }
    let samples: BTreeMap<Architecture, stat_tests::SampleSet> = pads
        .iter()
        .map(|(&arch, pad)| {
            let mut rng = seeds::rng(plan.master_seed, &format!("jitter/{arch}"), 0);
            stat_tests::sample_pad(pad, settings.mmd_points, true, &mut rng).map(|s| (arch, s))
        })
        .collect::<Result<_, _>>()
        .map_err(|e| OrchestratorError::Config(e.to_string()))?;
    let mut rows = Vec::new();
    for (first, second) in pairs(&samples.keys().copied().collect::<Vec<_>>()) {
        let seed = seeds::substream(plan.master_seed, &format!("mmd/{first}/{second}"), 0);
        let result = stat_tests::permutation_test(&samples[&first], &samples[&second], settings.mmd_permutations, seed)
            .map_err(|e| OrchestratorError::Config(e.to_string()))?;
        log::info!("MMD {first} vs {second}: {:.4e} (p = {:.4})", result.mmd_squared, result.p_value);
        rows.push(MmdRow { first, second, result });
    }
    store.write(&rel, serde_json::to_string(&rows)?.as_bytes())?;
    store.record("aggregate/mmd", &input, &[rel])?;
    Ok(rows)
}

fn cached_oracles(plan: &ExperimentPlan, store: &RunStore) -> Result<(Vec<TheoremCheck>, Vec<ShapeCheck>), OrchestratorError> {
    let input = hash_json(&(
        plan.master_seed,
        plan.modulus,
        plan.settings.tda_landmarks,
        plan.settings.bar_threshold,
        THEOREM_TRIALS,
        TDA_ORACLE_TRIALS,
    ));
    let rel = format!("{AGGREGATE_DIR}/oracles.json");
    if store.is_complete("aggregate/oracles", &input) {
        if let Ok(pair) = serde_json::from_str(&store.read_string(&rel)?) {
            return Ok(pair);
        }
    }
    let pair = run_oracles(plan.master_seed, plan.modulus, plan.settings.tda_landmarks, plan.settings.bar_threshold)?;
    store.write(&rel, serde_json::to_string(&pair)?.as_bytes())?;
    store.record("aggregate/oracles", &input, &[rel])?;
    Ok(pair)
}

/// The rank-dichotomy oracle and the synthetic circle and torus checks.
pub fn run_oracles(
    master_seed: u64,
    modulus: usize,
    points: usize,
    bar_threshold: f64,
) -> Result<(Vec<TheoremCheck>, Vec<ShapeCheck>), OrchestratorError> {
    let theorem = geometry::theorem_oracle(THEOREM_TRIALS, modulus, master_seed).map_err(|e| OrchestratorError::Config(e.to_string()))?;
    let shapes = tda::synthetic_oracle(TDA_ORACLE_TRIALS, points, bar_threshold, master_seed)
        .map_err(|e| OrchestratorError::Config(e.to_string()))?;
    Ok((theorem, shapes))
}

pub fn training_csv(rows: &[TrainingRow]) -> String {
    let mut out = String::from("architecture,seed,epochs,final_test_accuracy,converged\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{}\n",
            r.architecture, r.seed, r.epochs, r.final_test_accuracy, r.converged
        ));
    }
    out
}

/// Per-run wall-clock seconds; the one aggregate output that depends on the
/// machine rather than the store's hashed contents.
fn timing_json(rows: &[TrainingRow]) -> Result<String, OrchestratorError> {
    let entries: Vec<(String, u64, Option<f64>)> = rows.iter().map(|r| (r.architecture.to_string(), r.seed, r.seconds)).collect();
    Ok(serde_json::to_string_pretty(&entries)?)
}

pub fn pad_summary_csv(rows: &[PadSummary]) -> String {
    let mut out = String::from("architecture,estimator,runs,samples,within2,within5,median_distance\n");
    for r in rows {
        let median = r.median.map_or_else(|| "na".to_string(), |m| m.to_string());
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{median}\n",
            r.architecture,
            r.estimator.name(),
            r.runs,
            r.samples,
            r.within2,
            r.within5
        ));
    }
    out
}

/// Per architecture and layer: clusters, how many have top-2 share above
/// 0.99, and how many have each of the top 4 shares in `[0.2, 0.3]`.
pub fn pca_verdicts_csv(runs: &[RunRows<PcaRow>]) -> String {
    let mut tally: BTreeMap<(Architecture, usize), (usize, usize, usize)> = BTreeMap::new();
    for run in runs {
        for r in &run.rows {
            let t = tally.entry((run.architecture, r.layer)).or_default();
            t.0 += 1;
            t.1 += usize::from(r.top2() > 0.99);
            t.2 += usize::from(r.ratios.iter().all(|v| (0.2..=0.3).contains(v)));
        }
    }
    let mut out = String::from("architecture,layer,clusters,top2_above_099,top4_each_020_030\n");
    for ((arch, layer), (n, top2, band)) in tally {
        out.push_str(&format!("{arch},{layer},{n},{top2},{band}\n"));
    }
    out
}

pub fn theorem_csv(rows: &[TheoremCheck]) -> String {
    let mut out = String::from("mode,trials,passes,worst_tail_ratio,worst_signal_ratio,worst_residual\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.3e},{:.3e},{:.3e}\n",
            r.mode, r.trials, r.passes, r.worst_tail_ratio, r.worst_signal_ratio, r.worst_residual
        ));
    }
    out
}

pub fn shape_checks_csv(rows: &[ShapeCheck]) -> String {
    let mut out = String::from("shape,trials,passes,misses\n");
    for r in rows {
        let misses: Vec<String> = r.misses.iter().map(|(s, b)| format!("{s}:{b}")).collect();
        out.push_str(&format!("{},{},{},{}\n", r.shape.name(), r.trials, r.passes, misses.join(" ")));
    }
    out
}
