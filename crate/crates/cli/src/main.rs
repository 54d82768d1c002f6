use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use futurevis::agents::{TrainedArtifacts, Trainer};
use futurevis::config::{AgentKind, ExperimentConfig};
use futurevis::eval::{write_csv, MetricRow};
use futurevis::experiment::run_experiment;
use futurevis::verify::{self, CheckReport};

#[derive(Parser)]
#[command(name = "futurevis", version, about = "Future-visitation exploration agents on grid worlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write per-seed and aggregate CSVs.
    Train(TrainArgs),
    /// Tabular checks of the visitation operator, its fixed point and the
    /// policy comparison bound.
    Oracle(CheckArgs),
    /// Evaluate a saved checkpoint.
    Eval(EvalArgs),
    /// Run the full verification suite.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Train only this seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    agent: Option<String>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    checkpoint: PathBuf,
    /// Overrides the number of evaluation rollouts.
    #[arg(long)]
    rollouts: Option<usize>,
    /// Write the metric row to this CSV file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip the training-based checks.
    #[arg(long)]
    quick: bool,
    /// Exploration config for the entropy trend check.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(a) => train(a),
        Command::Oracle(a) => Ok(report(&oracle_checks(a.seed))),
        Command::Eval(a) => eval(a),
        Command::Verify(a) => verify_all(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: Option<&Path>) -> futurevis::Result<ExperimentConfig> {
    path.map_or_else(|| Ok(ExperimentConfig::default()), ExperimentConfig::load)
}

fn train(a: TrainArgs) -> futurevis::Result<bool> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(env) = a.env {
        cfg.env = env;
    }
    if let Some(agent) = a.agent {
        cfg.agent = agent.parse::<AgentKind>()?;
    }
    if let Some(seed) = a.seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    let out = run_experiment(&cfg, &a.out)?;
    if let Some(last) = out.aggregate.last() {
        println!(
            "{} on {}: iteration {}, return iqm {:.4} [{:.4}, {:.4}], entropy iqm {:.4} [{:.4}, {:.4}]",
            cfg.agent,
            cfg.env,
            last.iteration,
            last.return_iqm,
            last.return_lo,
            last.return_hi,
            last.entropy_iqm,
            last.entropy_lo,
            last.entropy_hi
        );
    }
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    Ok(true)
}

fn eval(a: EvalArgs) -> futurevis::Result<bool> {
    let mut state = TrainedArtifacts::load(&a.checkpoint)?;
    if let Some(n) = a.rollouts {
        state.config.eval_rollouts = n;
    }
    let trainer = Trainer::from_artifacts(state)?;
    let row: MetricRow = trainer.metric_row(Default::default());
    println!(
        "seed {} iteration {}: return {:.4}, entropy {:.4}",
        row.seed, row.iteration, row.return_estimate, row.entropy_estimate
    );
    if let Some(out) = a.out {
        write_csv(&out, &[row])?;
    }
    Ok(true)
}

fn oracle_checks(seed: u64) -> Vec<CheckReport> {
    vec![
        verify::contraction_check(100, seed),
        verify::fixed_point_check(20, seed),
        verify::q_identity_check(20, seed),
        verify::policy_bound_check(50, seed),
    ]
}

fn verify_all(a: VerifyArgs) -> futurevis::Result<bool> {
    let mut reports = oracle_checks(a.seed);
    // print as we go; the long checks take minutes
    report(&reports);
    let mut more: Vec<Box<dyn Fn() -> CheckReport>> = vec![
        Box::new(|| verify::geometric_sampler_check(a.seed)),
        Box::new(|| verify::intrinsic_unbiased_check(a.seed)),
        Box::new(|| verify::gradient_check_report(a.seed)),
        Box::new(|| verify::reduction_check(a.seed)),
    ];
    if !a.quick {
        let exploration = match &a.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::from_toml_str(verify::DESK_EXPLORATION)?,
        };
        let control = ExperimentConfig::from_toml_str(verify::DESK_CONTROL)?;
        more.push(Box::new(|| verify::learned_visitation_check(a.seed)));
        more.push(Box::new(move || verify::entropy_trend_check(&exploration)));
        more.push(Box::new(move || verify::return_trend_check(&control)));
    }
    for check in more {
        let r = check();
        println!("{}", r.line());
        reports.push(r);
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("{} passed, {failed} failed", reports.len() - failed);
    Ok(failed == 0)
}

fn report(reports: &[CheckReport]) -> bool {
    for r in reports {
        println!("{}", r.line());
    }
    reports.iter().all(|r| r.passed)
}
