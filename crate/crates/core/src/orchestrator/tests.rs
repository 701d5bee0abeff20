use super::*;

fn tiny_plan(dir: &Path) -> ExperimentPlan {
    let mut plan = ExperimentPlan::new(vec![Architecture::MlpAdd], vec![0, 1], vec![Analysis::Pad], dir.to_path_buf());
    plan.modulus = 7;
    plan.arch.insert(
        Architecture::MlpAdd,
        ArchOverrides {
            embedding_dim: Some(8),
            hidden_width: Some(16),
            max_epochs: Some(3),
            ..Default::default()
        },
    );
    plan
}

#[test]
fn plan_parses_from_toml() {
    let text = r#"
master_seed = 3
architectures = ["MlpAdd", "Attention1"]
seeds = "0..4"
analyses = ["pad", "theorem-oracle"]
output_dir = "out"

[arch.Attention1]
max_epochs = 10
learning_rate = 0.001

[settings]
mmd_permutations = 100
"#;
    let plan = ExperimentPlan::from_toml(text).unwrap();
    assert_eq!(plan.seeds, vec![0, 1, 2, 3]);
    assert_eq!(plan.master_seed, 3);
    let c = plan.model_config(Architecture::Attention1);
    assert_eq!((c.max_epochs, c.learning_rate, c.weight_decay), (10, 0.001, 0.000025));
    assert_eq!(plan.model_config(Architecture::MlpAdd).max_epochs, 30_000);
    assert_eq!(plan.settings.mmd_permutations, 100);
    assert_eq!(plan.settings.tda_landmarks, 250);
}

#[test]
fn plan_rejects_empty_sets_and_unknown_keys() {
    assert!(ExperimentPlan::from_toml("architectures = []\nseeds = [0]\nanalyses = [\"pad\"]").is_err());
    assert!(ExperimentPlan::from_toml("architectures = [\"MlpAdd\"]\nseeds = [0]\nanalyses = []").is_err());
    assert!(ExperimentPlan::from_toml("architectures = [\"MlpAdd\"]\nseeds = [0]\nanalyses = [\"pad\"]\nbogus = 1").is_err());
}

#[test]
fn seed_ranges() {
    assert_eq!(parse_seed_range("2..5").unwrap(), vec![2, 3, 4]);
    assert_eq!(parse_seed_range("2..=5").unwrap(), vec![2, 3, 4, 5]);
    assert_eq!(parse_seed_range("1, 4").unwrap(), vec![1, 4]);
    assert!(parse_seed_range("5..2").is_err());
}

#[test]
fn config_hash_ignores_output_location() {
    let a = tiny_plan(Path::new("x"));
    let b = tiny_plan(Path::new("y"));
    assert_eq!(a.config_hash(), b.config_hash());
    let mut c = a.clone();
    c.master_seed = 1;
    assert_ne!(a.config_hash(), c.config_hash());
}

#[test]
fn training_stage_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let plan = tiny_plan(dir.path());
    let store = open_store(&plan).unwrap();
    let first = train_stage(&plan, &store, 2);
    assert_eq!((first.executed, first.skipped, first.failures.len()), (2, 0, 0));
    let manifest = std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
    let store = open_store(&plan).unwrap();
    let second = train_stage(&plan, &store, 1);
    assert_eq!((second.executed, second.skipped), (0, 2));
    assert_eq!(std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap(), manifest);
    let run = load_run(&store, Architecture::MlpAdd, 1).unwrap();
    assert_eq!(run.trace.len(), 3);
}

#[test]
fn tampered_artifacts_trigger_retraining() {
    let dir = tempfile::tempdir().unwrap();
    let plan = tiny_plan(dir.path());
    let store = open_store(&plan).unwrap();
    train_stage(&plan, &store, 1);
    let weights = dir.path().join("runs/MlpAdd/seed-0/weights.bin");
    let mut bytes = std::fs::read(&weights).unwrap();
    bytes[0] ^= 1;
    std::fs::write(&weights, bytes).unwrap();
    let again = train_stage(&plan, &store, 1);
    assert_eq!((again.executed, again.skipped), (1, 1));
}

#[test]
fn failures_are_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = tiny_plan(dir.path());
    plan.architectures.push(Architecture::MlpConcat);
    // a file where the run directory should be makes that cell fail
    std::fs::create_dir_all(dir.path().join("runs")).unwrap();
    std::fs::write(dir.path().join("runs/MlpConcat"), b"x").unwrap();
    plan.arch.insert(
        Architecture::MlpConcat,
        ArchOverrides {
            embedding_dim: Some(4),
            hidden_width: Some(8),
            max_epochs: Some(1),
            ..Default::default()
        },
    );
    let store = open_store(&plan).unwrap();
    let report = train_stage(&plan, &store, 1);
    assert_eq!(report.executed, 2);
    assert_eq!(report.failures.len(), 2);
}

/// Small MlpConcat on n = 7, trained on the whole grid, that fits it
/// within a few hundred epochs.
fn converging_plan(dir: &Path, analyses: Vec<Analysis>) -> ExperimentPlan {
    let mut plan = ExperimentPlan::new(vec![Architecture::MlpConcat], vec![0], analyses, dir.to_path_buf());
    plan.modulus = 7;
    plan.train_fraction = 1.0;
    plan.arch.insert(
        Architecture::MlpConcat,
        ArchOverrides {
            embedding_dim: Some(16),
            hidden_width: Some(64),
            max_epochs: Some(400),
            patience: Some(5),
            batch_size: Some(16),
            learning_rate: Some(0.01),
            weight_decay: Some(0.0),
            ..Default::default()
        },
    );
    plan
}

fn set_cap(plan: &mut ExperimentPlan, arch: Architecture, cap: usize) {
    plan.arch.get_mut(&arch).unwrap().max_epochs = Some(cap);
}

#[test]
fn cap_changes_reuse_runs_whose_trace_is_unaffected() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = converging_plan(dir.path(), vec![Analysis::Pad]);
    let store = open_store(&plan).unwrap();
    assert_eq!(train_stage(&plan, &store, 1).executed, 1);
    let len = load_run(&store, Architecture::MlpConcat, 0).unwrap().trace.len();
    assert!(len < 400, "did not stop early");

    // a larger cap, or one equal to the stopping epoch, gives the same run
    set_cap(&mut plan, Architecture::MlpConcat, 1000);
    assert_eq!(train_stage(&plan, &store, 1).skipped, 1);
    set_cap(&mut plan, Architecture::MlpConcat, len);
    assert_eq!(train_stage(&plan, &store, 1).skipped, 1);
    // a cap that cuts the trace short does not
    set_cap(&mut plan, Architecture::MlpConcat, len - 1);
    assert_eq!(train_stage(&plan, &store, 1).executed, 1);
    assert_eq!(load_run(&store, Architecture::MlpConcat, 0).unwrap().trace.len(), len - 1);
    // and a run cut by its cap is not stretched by a larger one
    set_cap(&mut plan, Architecture::MlpConcat, len);
    assert_eq!(train_stage(&plan, &store, 1).executed, 1);
}

fn pipeline(dir: &Path, jobs: usize) -> ExperimentPlan {
    let mut plan = converging_plan(dir, Analysis::ALL.to_vec());
    plan.architectures.push(Architecture::MlpAdd);
    plan.seeds = vec![0, 1];
    let same = plan.arch[&Architecture::MlpConcat];
    plan.arch.insert(Architecture::MlpAdd, same);
    plan.settings.mmd_points = 60;
    plan.settings.mmd_permutations = 50;
    plan.settings.tda_landmarks = 40;
    plan.settings.min_cluster_size = 2;
    let store = open_store(&plan).unwrap();
    assert!(train_stage(&plan, &store, jobs).failures.is_empty());
    let analyzed = analyze_stage(&plan, &store, jobs);
    assert!(analyzed.failures.is_empty(), "{:?}", analyzed.failures);
    aggregate_stage(&plan, &store).unwrap();
    report_stage(&plan, &store).unwrap();
    plan
}

/// Every file under `dir` except wall-clock timings, keyed by relative path.
fn snapshot(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut std::collections::BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if path.file_name().unwrap() != TIMING_FILE {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

#[test]
fn pipeline_is_byte_identical_across_job_counts_and_reruns() {
    let (one, three) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let plan = pipeline(one.path(), 1);
    pipeline(three.path(), 3);
    let (a, b) = (snapshot(one.path()), snapshot(three.path()));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (rel, bytes) in &a {
        assert!(bytes == &b[rel], "{rel} differs between job counts");
    }
    for needed in ["aggregate/pad-summary.csv", "aggregate/mmd.csv", "aggregate/betti-distribution.csv", "report/index.html"] {
        assert!(a.contains_key(needed), "missing {needed}");
    }

    // rerunning every stage changes nothing
    let store = open_store(&plan).unwrap();
    assert_eq!(train_stage(&plan, &store, 2).executed, 0);
    assert_eq!(analyze_stage(&plan, &store, 2).executed, 0);
    aggregate_stage(&plan, &store).unwrap();
    report_stage(&plan, &store).unwrap();
    let rerun = snapshot(one.path());
    assert_eq!(rerun.keys().collect::<Vec<_>>(), a.keys().collect::<Vec<_>>());
    for (rel, bytes) in &a {
        assert!(bytes == &rerun[rel], "{rel} changed on rerun");
    }
}

#[test]
fn aggregate_merges_seed_counts_and_lists_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let plan = pipeline(dir.path(), 2);
    let store = open_store(&plan).unwrap();
    let agg = aggregate_stage(&plan, &store).unwrap();
    let runs: Vec<RunRows<crate::phase_stats::PhaseSample>> = load_rows(&plan, &store, "pad.json");
    for summary in &agg.pads {
        let expected: usize = runs
            .iter()
            .filter(|r| r.architecture == summary.architecture && r.converged)
            .map(|r| r.rows.iter().filter(|s| s.estimator == summary.estimator).count())
            .sum();
        assert_eq!(summary.samples as usize, expected);
    }
    let converged: std::collections::BTreeSet<Architecture> =
        agg.training.iter().filter(|t| t.converged).map(|t| t.architecture).collect();
    assert_eq!(agg.mmd.len(), usize::from(converged.len() == 2));

    let mut wider = plan.clone();
    wider.seeds.push(5);
    let agg = aggregate_stage(&wider, &store).unwrap();
    assert!(agg.gaps.iter().any(|g| g.seed == 5 && g.analysis == "train"));
}

#[test]
fn report_on_empty_store_marks_every_section() {
    let dir = tempfile::tempdir().unwrap();
    let plan = tiny_plan(dir.path());
    let store = open_store(&plan).unwrap();
    let sections = report_stage(&plan, &store).unwrap();
    assert!(sections.iter().all(|s| s.files.is_empty()));
    let index = std::fs::read_to_string(dir.path().join("report/index.html")).unwrap();
    assert_eq!(index.matches("no data").count(), sections.len());
    assert!(index.contains(&plan.config_hash()));
    let again = std::fs::read(dir.path().join("report/index.html")).unwrap();
    report_stage(&plan, &store).unwrap();
    assert_eq!(std::fs::read(dir.path().join("report/index.html")).unwrap(), again);
}
