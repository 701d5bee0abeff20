use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use modgeo_core::modnets::Architecture;
use modgeo_core::orchestrator::{self, parse_seed_range, Analysis, ExperimentPlan, StageReport};

#[derive(Parser)]
#[command(name = "modgeo", version, about = "Train modular-addition networks and analyse their representations")]
struct Cli {
    /// TOML experiment plan; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed range such as `0..10`, `0..=9` or `1,4,7`.
    #[arg(long, global = true)]
    seeds: Option<String>,
    /// Comma-separated architectures.
    #[arg(long, global = true, value_delimiter = ',')]
    arch: Vec<String>,
    /// Output directory (the run store).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every missing (architecture, seed) model.
    Train,
    /// Run the per-model analyses of the plan on trained models.
    Analyze,
    /// Merge per-model results into cross-seed tables.
    Aggregate,
    /// Render SVG figures and an index page from the aggregate tables.
    Report,
    /// Run the synthetic rank and persistence checks, no training needed.
    Oracle,
    /// Run the quick invariant suite.
    Selftest,
}

fn plan_from(cli: &Cli) -> Result<ExperimentPlan> {
    let mut plan = match &cli.config {
        Some(path) => ExperimentPlan::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentPlan::new(
            Architecture::ALL.to_vec(),
            (0..10).collect(),
            Analysis::ALL.to_vec(),
            PathBuf::from("modgeo-out"),
        ),
    };
    if let Some(s) = &cli.seeds {
        plan.seeds = parse_seed_range(s)?;
    }
    if !cli.arch.is_empty() {
        plan.architectures = cli.arch.iter().map(|a| a.parse()).collect::<Result<_, _>>()?;
    }
    if let Some(out) = &cli.out {
        plan.output_dir = out.clone();
    }
    plan.validate()?;
    Ok(plan)
}

fn finish(stage: &str, report: &StageReport) -> ExitCode {
    println!(
        "{stage}: {} executed, {} skipped, {} failed",
        report.executed,
        report.skipped,
        report.failures.len()
    );
    for (key, err) in &report.failures {
        eprintln!("  {key}: {err}");
    }
    if report.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(report.failures.len().min(255) as u8)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let plan = plan_from(&cli)?;
    if cli.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    let store = || orchestrator::open_store(&plan);
    match cli.command {
        Command::Train => Ok(finish("train", &orchestrator::train_stage(&plan, &store()?, cli.jobs))),
        Command::Analyze => Ok(finish("analyze", &orchestrator::analyze_stage(&plan, &store()?, cli.jobs))),
        Command::Aggregate => {
            let agg = orchestrator::aggregate_stage(&plan, &store()?)?;
            println!(
                "aggregate: {} runs, {} unconverged, {} gaps",
                agg.training.len(),
                agg.unconverged.len(),
                agg.gaps.len()
            );
            for gap in &agg.gaps {
                println!("  gap {}/seed-{} {}: {}", gap.architecture, gap.seed, gap.analysis, gap.reason);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Report => {
            let store = store()?;
            let sections = orchestrator::report_stage(&plan, &store)?;
            for s in &sections {
                let state = if s.files.is_empty() { "no data".to_string() } else { format!("{} files", s.files.len()) };
                println!("{}: {state}", s.title);
            }
            println!("report: {}", store.path(orchestrator::REPORT_DIR).join("index.html").display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle => {
            let (theorem, shapes) = orchestrator::run_oracles(
                plan.master_seed,
                plan.modulus,
                plan.settings.tda_landmarks,
                plan.settings.bar_threshold,
            )?;
            print!("{}", orchestrator::theorem_csv(&theorem));
            print!("{}", orchestrator::shape_checks_csv(&shapes));
            let ok = theorem.iter().all(|t| t.passes == t.trials)
                && shapes.iter().all(|s| s.passes * 100 >= s.trials * 95);
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Selftest => {
            let checks = orchestrator::selftest(plan.master_seed);
            for c in &checks {
                println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(failed as u8) })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
