//! Per-run analyses: clustering, phase samples, circuit metrics, PCA and
//! persistent homology, each cached in the store under its own key.

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{hash_json, load_run, run_pool, train_input_hash, Analysis, ExperimentPlan, OrchestratorError, RunStore, StageReport};
use crate::circuit_metrics;
use crate::freq_cluster::{self, Clustering, NeuronCluster};
use crate::geometry::{self, Verdict, DEFAULT_ELBOW_ENERGY};
use crate::modnets::{self, ActivationDump, Architecture, TrainedModel};
use crate::phase_stats::{self, PhaseSample};
use crate::seeds;
use crate::tda::{self, BettiVector, RipsOptions, Shape};

/// Analyses computed once per trained run.
pub const PER_RUN: [Analysis; 4] = [Analysis::Pad, Analysis::Metrics, Analysis::Pca, Analysis::Tda];

pub fn analysis_dir(arch: Architecture, seed: u64) -> String {
    format!("analysis/{arch}/seed-{seed}")
}

fn analysis_key(analysis: Analysis, arch: Architecture, seed: u64) -> String {
    format!("analysis/{analysis}/{arch}/seed-{seed}")
}

fn analysis_input_hash(plan: &ExperimentPlan, analysis: Analysis, arch: Architecture, seed: u64) -> String {
    hash_json(&(
        train_input_hash(plan, arch, seed),
        analysis.name(),
        plan.master_seed,
        &plan.settings,
    ))
}

/// Rows of one analysis for one run, with the run's convergence status.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRows<T> {
    pub architecture: Architecture,
    pub seed: u64,
    pub converged: bool,
    pub final_test_accuracy: f64,
    pub rows: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaRow {
    /// 1-based hidden layer.
    pub layer: usize,
    pub frequency: usize,
    pub size: usize,
    pub remap_factor: usize,
    pub ratios: [f64; 4],
    pub verdict: Verdict,
}

impl PcaRow {
    pub fn top2(&self) -> f64 {
        self.ratios[0] + self.ratios[1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BettiRow {
    /// 1-based hidden layer, or `logits`.
    pub layer: String,
    pub frequency: usize,
    pub points: usize,
    pub undersized: bool,
    pub betti: BettiVector,
    pub shape: Shape,
}

pub const LOGITS_LAYER: &str = "logits";

/// Lazily computed views of one trained run.
struct RunContext<'a> {
    plan: &'a ExperimentPlan,
    arch: Architecture,
    seed: u64,
    trained: TrainedModel,
    dumps: Option<Vec<ActivationDump>>,
    clusterings: Option<Vec<Clustering>>,
}

impl<'a> RunContext<'a> {
    fn dumps(&mut self) -> Result<&[ActivationDump], OrchestratorError> {
        if self.dumps.is_none() {
            self.dumps = Some(modnets::extract_activations(&self.trained.model)?);
        }
        Ok(self.dumps.as_deref().expect("just set"))
    }

    fn clusterings(&mut self) -> Result<&[Clustering], OrchestratorError> {
        if self.clusterings.is_none() {
            let (n, share) = (self.plan.modulus, self.plan.settings.min_energy_share);
            let c = self.dumps()?.iter().map(|d| freq_cluster::cluster_neurons(d, n, share)).collect();
            self.clusterings = Some(c);
        }
        Ok(self.clusterings.as_deref().expect("just set"))
    }

    /// The largest clusters of a layer that meet the size floor, largest
    /// first, ties to the lower frequency.
    fn top_clusters(&mut self, layer: usize) -> Result<Vec<NeuronCluster>, OrchestratorError> {
        let (min, cap) = (self.plan.settings.min_cluster_size, self.plan.settings.tda_max_clusters);
        let mut clusters: Vec<NeuronCluster> = self.clusterings()?[layer]
            .clusters
            .iter()
            .filter(|c| c.member_neurons.len() >= min)
            .cloned()
            .collect();
        clusters.sort_by_key(|c| (std::cmp::Reverse(c.member_neurons.len()), c.key_frequency));
        clusters.truncate(cap);
        Ok(clusters)
    }

    fn rows<T>(&self, rows: Vec<T>) -> RunRows<T> {
        RunRows {
            architecture: self.arch,
            seed: self.seed,
            converged: self.trained.converged,
            final_test_accuracy: self.trained.final_test_accuracy,
            rows,
        }
    }

    fn err(&self, analysis: Analysis, detail: impl ToString) -> OrchestratorError {
        OrchestratorError::Analysis {
            analysis: analysis.name().into(),
            run: format!("{}/seed-{}", self.arch, self.seed),
            detail: detail.to_string(),
        }
    }
}

/// Runs every per-run analysis of the plan that is not already cached for
/// `(arch, seed)`. Returns one outcome per analysis.
pub fn analyze_run(plan: &ExperimentPlan, store: &RunStore, arch: Architecture, seed: u64) -> Vec<(String, Result<bool, OrchestratorError>)> {
    let wanted: Vec<Analysis> = PER_RUN.into_iter().filter(|a| plan.analyses.contains(a)).collect();
    let pending: Vec<Analysis> = wanted
        .iter()
        .copied()
        .filter(|&a| !store.is_complete(&analysis_key(a, arch, seed), &analysis_input_hash(plan, a, arch, seed)))
        .collect();
    let mut out: Vec<(String, Result<bool, OrchestratorError>)> = wanted
        .iter()
        .filter(|a| !pending.contains(a))
        .map(|&a| (analysis_key(a, arch, seed), Ok(false)))
        .collect();
    if pending.is_empty() {
        return out;
    }
    let trained = match load_run(store, arch, seed) {
        Ok(t) => t,
        Err(e) => {
            let detail = e.to_string();
            for a in pending {
                out.push((analysis_key(a, arch, seed), Err(OrchestratorError::MissingRun(detail.clone()))));
            }
            return out;
        }
    };
    let mut ctx = RunContext {
        plan,
        arch,
        seed,
        trained,
        dumps: None,
        clusterings: None,
    };
    for analysis in pending {
        let key = analysis_key(analysis, arch, seed);
        let result = run_one(&mut ctx, store, analysis).and_then(|artifacts| {
            store.record(&key, &analysis_input_hash(plan, analysis, arch, seed), &artifacts)?;
            Ok(true)
        });
        out.push((key, result));
    }
    out
}

fn run_one(ctx: &mut RunContext, store: &RunStore, analysis: Analysis) -> Result<Vec<String>, OrchestratorError> {
    let dir = analysis_dir(ctx.arch, ctx.seed);
    let mut files: Vec<(String, String)> = Vec::new();
    match analysis {
        Analysis::Pad => {
            let n = ctx.plan.modulus;
            let seed = ctx.seed;
            let clusterings = ctx.clusterings()?.to_vec();
            let dumps = ctx.dumps()?;
            let mut samples: Vec<PhaseSample> = Vec::new();
            for (clustering, dump) in clusterings.iter().zip(dumps) {
                let (max, com) = phase_stats::phase_samples(clustering, dump, n, seed);
                samples.extend(max);
                samples.extend(com);
            }
            files.push((format!("{dir}/clusters.csv"), freq_cluster::cluster_summary_csv(&clusterings)));
            files.push((format!("{dir}/pad-samples.csv"), phase_stats::samples_csv(&samples)));
            files.push((format!("{dir}/pad.json"), serde_json::to_string(&ctx.rows(samples))?));
        }
        Analysis::Metrics => {
            let model = &ctx.trained.model;
            let sym = circuit_metrics::gradient_symmetricity(model, ctx.seed).map_err(|e| ctx.err(analysis, e))?;
            let irr = circuit_metrics::distance_irrelevance(model, ctx.seed).map_err(|e| ctx.err(analysis, e))?;
            let rows = vec![sym, irr];
            files.push((format!("{dir}/metrics.csv"), circuit_metrics::metrics_csv(&rows)));
            files.push((format!("{dir}/metrics.json"), serde_json::to_string(&ctx.rows(rows))?));
        }
        Analysis::Pca => {
            let min = ctx.plan.settings.min_cluster_size;
            let n = ctx.plan.modulus;
            let clusterings = ctx.clusterings()?.to_vec();
            let mut rows = Vec::new();
            for clustering in &clusterings {
                let layer = clustering.layer_index + 1;
                for c in clustering.clusters.iter().filter(|c| c.member_neurons.len() >= min) {
                    let pca = geometry::pca_cluster(&geometry::tensor_to_matrix(&c.matrix), 4)
                        .map_err(|e| ctx.err(analysis, e))?;
                    let r = &pca.explained_variance_ratios;
                    rows.push(PcaRow {
                        layer,
                        frequency: c.key_frequency,
                        size: c.member_neurons.len(),
                        remap_factor: c.remap_factor,
                        ratios: [r[0], r[1], r[2], r[3]],
                        verdict: pca.elbow_verdict(DEFAULT_ELBOW_ENERGY),
                    });
                }
                for c in ctx.top_clusters(clustering.layer_index)? {
                    let pca = geometry::pca_cluster(&geometry::tensor_to_matrix(&c.matrix), 4)
                        .map_err(|e| ctx.err(analysis, e))?;
                    files.push((
                        format!("{dir}/pca/layer{layer}-f{}.csv", c.key_frequency),
                        geometry::pca_csv(&pca, n, c.remap_factor),
                    ));
                }
            }
            files.push((format!("{dir}/pca-summary.csv"), pca_summary_csv(&[ctx.rows(rows.clone())])));
            files.push((format!("{dir}/pca.json"), serde_json::to_string(&ctx.rows(rows))?));
        }
        Analysis::Tda => {
            let (rows, diagrams) = tda_rows(ctx).map_err(|e| ctx.err(analysis, e))?;
            files.extend(diagrams.into_iter().map(|(name, csv)| (format!("{dir}/diagrams/{name}.csv"), csv)));
            files.push((format!("{dir}/betti.csv"), betti_rows_csv(&[ctx.rows(rows.clone())])));
            files.push((format!("{dir}/tda.json"), serde_json::to_string(&ctx.rows(rows))?));
        }
        Analysis::Mmd | Analysis::TheoremOracle => unreachable!("not a per-run analysis"),
    }
    for (rel, text) in &files {
        store.write(rel, text.as_bytes())?;
    }
    Ok(files.into_iter().map(|(rel, _)| rel).collect())
}

type Diagrams = Vec<(String, String)>;

fn tda_rows(ctx: &mut RunContext) -> Result<(Vec<BettiRow>, Diagrams), OrchestratorError> {
    let settings = ctx.plan.settings;
    let n = ctx.plan.modulus;
    let bad = |e: tda::TdaError| OrchestratorError::Config(e.to_string());
    let mut clouds: Vec<(String, usize, tda::PointCloud)> = Vec::new();
    let layers = ctx.clusterings()?.len();
    let mut last = Vec::new();
    for layer in 0..layers {
        let clusters = ctx.top_clusters(layer)?;
        for c in &clusters {
            let cloud = tda::PointCloud::new(c.matrix.last_dim(), c.matrix.data().to_vec(), "cluster").map_err(bad)?;
            clouds.push(((layer + 1).to_string(), c.key_frequency, cloud));
        }
        last = clusters;
    }
    let logits = ctx.dumps()?[0].logits.clone();
    for c in &last {
        let cloud = tda::logits_fourier_cloud(&logits, n, c.key_frequency).map_err(bad)?;
        clouds.push((LOGITS_LAYER.to_string(), c.key_frequency, cloud));
    }
    let (master, arch, seed) = (ctx.plan.master_seed, ctx.arch, ctx.seed);
    let results: Vec<Result<(BettiRow, (String, String)), tda::TdaError>> = clouds
        .into_par_iter()
        .map(|(layer, f, cloud)| {
            let stream = format!("tda/{arch}/{seed}/{layer}/{f}");
            let landmarks = tda::maxmin_landmarks(&cloud.normalized(), settings.tda_landmarks, seeds::substream(master, &stream, 0));
            let diagram = tda::rips_persistence(&landmarks.cloud, &RipsOptions::default())?;
            let betti = tda::betti_from_diagram(&diagram, settings.bar_threshold)?;
            let name = format!("{layer}-f{f}");
            let row = BettiRow {
                layer,
                frequency: f,
                points: landmarks.cloud.len(),
                undersized: landmarks.undersized,
                betti,
                shape: betti.shape(),
            };
            Ok((row, (name, diagram.to_csv())))
        })
        .collect();
    let mut rows = Vec::new();
    let mut diagrams = Vec::new();
    for r in results {
        let (row, diagram) = r.map_err(bad)?;
        rows.push(row);
        diagrams.push(diagram);
    }
    Ok((rows, diagrams))
}

pub fn pca_summary_csv(runs: &[RunRows<PcaRow>]) -> String {
    let mut out = String::from("architecture,seed,converged,layer,frequency,size,remap_factor,evr1,evr2,evr3,evr4,top2,verdict\n");
    for run in runs {
        for r in &run.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
                run.architecture,
                run.seed,
                run.converged,
                r.layer,
                r.frequency,
                r.size,
                r.remap_factor,
                r.ratios[0],
                r.ratios[1],
                r.ratios[2],
                r.ratios[3],
                r.top2(),
                r.verdict.name()
            ));
        }
    }
    out
}

pub fn betti_rows_csv(runs: &[RunRows<BettiRow>]) -> String {
    let mut out = String::from("architecture,seed,converged,layer,frequency,points,undersized,b0,b1,b2,shape\n");
    for run in runs {
        for r in &run.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                run.architecture,
                run.seed,
                run.converged,
                r.layer,
                r.frequency,
                r.points,
                r.undersized,
                r.betti.0,
                r.betti.1,
                r.betti.2,
                r.shape.name()
            ));
        }
    }
    out
}

/// Loads the cached rows of `analysis` for every run of the plan that has them.
pub fn load_rows<T: DeserializeOwned>(plan: &ExperimentPlan, store: &RunStore, file: &str) -> Vec<RunRows<T>> {
    let mut out = Vec::new();
    for &arch in &plan.architectures {
        for &seed in &plan.seeds {
            let rel = format!("{}/{file}", analysis_dir(arch, seed));
            if let Ok(text) = store.read_string(&rel) {
                match serde_json::from_str(&text) {
                    Ok(rows) => out.push(rows),
                    Err(e) => log::warn!("{rel}: {e}"),
                }
            }
        }
    }
    out
}

/// Per-run analyses over every `(architecture, seed)` of the plan.
pub fn analyze_stage(plan: &ExperimentPlan, store: &RunStore, jobs: usize) -> StageReport {
    let cells: Vec<(u64, Architecture)> = plan
        .seeds
        .iter()
        .flat_map(|&s| plan.architectures.iter().map(move |&a| (s, a)))
        .collect();
    let outcomes = run_pool(jobs, cells, |(seed, arch)| analyze_run(plan, store, arch, seed));
    let mut report = StageReport::default();
    for (key, outcome) in outcomes.into_iter().flatten() {
        report.absorb(key, outcome);
    }
    report
}
