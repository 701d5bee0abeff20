//! Sweeps over architectures and seeds: training, per-run analyses,
//! aggregation and report emission, all persisted in a [`RunStore`].

mod aggregate;
mod analyze;
mod plan;
mod report;
mod selftest;
mod store;

pub use aggregate::{
    aggregate_stage, betti_key, gaps_csv, pad_summary_csv, provenance, strip_comments, Gap, pca_verdicts_csv, run_oracles, shape_checks_csv, theorem_csv,
    training_csv, Aggregate, MmdRow, PadSummary, TrainingRow, AGGREGATE_DIR, TDA_ORACLE_TRIALS, THEOREM_TRIALS,
};
pub use analyze::{
    analysis_dir, analyze_run, analyze_stage, betti_rows_csv, load_rows, pca_summary_csv, BettiRow, PcaRow, RunRows,
    LOGITS_LAYER, PER_RUN,
};

pub use plan::{
    hash_bytes, hash_json, parse_seed_range, Analysis, AnalysisSettings, ArchOverrides, ExperimentPlan,
};
pub use report::{report_stage, Section, REPORT_DIR};
pub use selftest::{selftest, Check};
pub use store::{Manifest, ManifestEntry, RunStore, MANIFEST_FILE};

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modnets::{self, Architecture, Dataset, ModnetError, TrainedModel};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing run {0}")]
    MissingRun(String),
    #[error("analysis {analysis} failed for {run}: {detail}")]
    Analysis { analysis: String, run: String, detail: String },
    #[error(transparent)]
    Modnet(#[from] ModnetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Outcome counts of one stage over many jobs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageReport {
    pub executed: usize,
    pub skipped: usize,
    pub failures: Vec<(String, String)>,
}

impl StageReport {
    fn absorb(&mut self, key: String, outcome: Result<bool, OrchestratorError>) {
        match outcome {
            Ok(true) => self.executed += 1,
            Ok(false) => self.skipped += 1,
            Err(e) => {
                log::error!("{key}: {e}");
                self.failures.push((key, e.to_string()));
            }
        }
    }

    pub fn merge(&mut self, other: StageReport) {
        self.executed += other.executed;
        self.skipped += other.skipped;
        self.failures.extend(other.failures);
    }
}

/// Runs `f` over `items` on a pool of `jobs` threads, preserving order.
pub fn run_pool<T: Send, R: Send>(jobs: usize, items: Vec<T>, f: impl Fn(T) -> R + Sync + Send) -> Vec<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| items.into_par_iter().map(f).collect())
}

pub fn run_dir(arch: Architecture, seed: u64) -> String {
    format!("runs/{arch}/seed-{seed}")
}

fn train_key(arch: Architecture, seed: u64) -> String {
    format!("train/{arch}/seed-{seed}")
}

pub fn train_input_hash(plan: &ExperimentPlan, arch: Architecture, seed: u64) -> String {
    // the recorded decisions cover the stopping rule, so changing it retrains
    hash_json(&(plan.model_config(arch), plan.task(seed), modnets::recorded_decisions()))
}

/// Wall-clock training time, kept outside the hashed artifacts.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Timing {
    pub seconds: f64,
    pub epochs: usize,
}

pub const TIMING_FILE: &str = "timing.json";

/// Trains `(arch, seed)` unless the store already holds it. Returns whether
/// training ran.
pub fn ensure_trained(plan: &ExperimentPlan, store: &RunStore, arch: Architecture, seed: u64) -> Result<bool, OrchestratorError> {
    let key = train_key(arch, seed);
    let input = train_input_hash(plan, arch, seed);
    if store.is_complete(&key, &input) || reuse_under_new_cap(plan, store, arch, seed, &key)? {
        return Ok(false);
    }
    let task = plan.task(seed);
    let data = Dataset::generate(&task)?;
    let mut trained = modnets::build_model(plan.model_config(arch), task)?;
    let start = Instant::now();
    modnets::train_model_with_hook(&mut trained, &data, &mut |r| {
        if r.epoch % 250 == 0 {
            log::info!(
                "{arch} seed {seed} epoch {}: train loss {:.4} test acc {:.4}",
                r.epoch,
                r.train_loss,
                r.test_accuracy
            );
        }
        true
    })?;
    let seconds = start.elapsed().as_secs_f64();
    log::info!(
        "{arch} seed {seed}: {} epochs in {seconds:.0}s, final test accuracy {:.4}",
        trained.trace.len(),
        trained.final_test_accuracy
    );
    let dir = run_dir(arch, seed);
    modnets::save_checkpoint(&trained, &store.path(&dir))?;
    let timing = Timing {
        seconds,
        epochs: trained.trace.len(),
    };
    store.write(&format!("{dir}/{TIMING_FILE}"), serde_json::to_string(&timing)?.as_bytes())?;
    let artifacts: Vec<String> = [modnets::META_FILE, modnets::WEIGHTS_FILE, modnets::TRACE_FILE]
        .iter()
        .map(|f| format!("{dir}/{f}"))
        .collect();
    store.record(&key, &input, &artifacts)?;
    Ok(true)
}

/// Training is deterministic and the epoch cap only decides where it ends,
/// so a stored run survives a cap change when its trace would be the same:
/// it either stopped on its own within the new cap or ran exactly to it.
/// The checkpoint's own config, task and decisions must otherwise match the
/// plan. The manifest entry is then rewritten under the new input hash.
fn reuse_under_new_cap(
    plan: &ExperimentPlan,
    store: &RunStore,
    arch: Architecture,
    seed: u64,
    key: &str,
) -> Result<bool, OrchestratorError> {
    let Some(entry) = store.entry(key) else { return Ok(false) };
    if !store.is_complete(key, &entry.input_hash) {
        return Ok(false);
    }
    let dir = run_dir(arch, seed);
    let (Ok(meta), Ok(stored)) = (modnets::load_meta(&store.path(&dir)), load_run(store, arch, seed)) else {
        return Ok(false);
    };
    let mut cfg = plan.model_config(arch);
    let new_cap = cfg.max_epochs;
    let old_cap = stored.model.config.max_epochs;
    cfg.max_epochs = old_cap;
    if cfg != stored.model.config || stored.task != plan.task(seed) || meta.decisions != modnets::recorded_decisions() {
        return Ok(false);
    }
    let len = stored.trace.len();
    if !((len < old_cap && len <= new_cap) || len == new_cap) {
        return Ok(false);
    }
    let artifacts: Vec<String> = entry.artifacts.keys().cloned().collect();
    store.record(key, &train_input_hash(plan, arch, seed), &artifacts)?;
    log::info!("{arch} seed {seed}: reusing {len}-epoch run under a cap of {new_cap}");
    Ok(true)
}

pub fn load_run(store: &RunStore, arch: Architecture, seed: u64) -> Result<TrainedModel, OrchestratorError> {
    let dir = store.path(&run_dir(arch, seed));
    if !dir.join(modnets::META_FILE).exists() {
        return Err(OrchestratorError::MissingRun(run_dir(arch, seed)));
    }
    Ok(modnets::load_checkpoint(&dir)?)
}

pub fn load_timing(store: &RunStore, arch: Architecture, seed: u64) -> Option<Timing> {
    let text = store.read_string(&format!("{}/{TIMING_FILE}", run_dir(arch, seed))).ok()?;
    serde_json::from_str(&text).ok()
}

/// Trains every missing `(architecture, seed)` cell; seeds vary slowest so a
/// partial sweep covers all architectures.
pub fn train_stage(plan: &ExperimentPlan, store: &RunStore, jobs: usize) -> StageReport {
    let cells: Vec<(u64, Architecture)> = plan
        .seeds
        .iter()
        .flat_map(|&s| plan.architectures.iter().map(move |&a| (s, a)))
        .collect();
    let outcomes = run_pool(jobs, cells, |(seed, arch)| {
        (train_key(arch, seed), ensure_trained(plan, store, arch, seed))
    });
    let mut report = StageReport::default();
    for (key, outcome) in outcomes {
        report.absorb(key, outcome);
    }
    report
}

pub fn open_store(plan: &ExperimentPlan) -> Result<RunStore, OrchestratorError> {
    RunStore::open(Path::new(&plan.output_dir))
}

#[cfg(test)]
mod tests;
