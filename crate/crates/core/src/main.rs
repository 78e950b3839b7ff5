use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fedcp_core::autodiff::Fault;
use fedcp_core::config::{parse_config, ExperimentConfig};
use fedcp_core::experiment::{
    build_simulation, lambda_pattern, prepare_output_dir, run_experiment, run_sweep, write_outputs, SweepAxis,
    PARTITION_FILE,
};
use fedcp_core::federation::Algorithm;
use fedcp_core::selftest;

#[derive(Parser)]
#[command(name = "fedcp-sim", version, about = "Federated learning simulator with conditional feature policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed` from the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "FEDCP_SIM_WORKERS")]
    workers: Option<usize>,
    /// Overrides `output_dir` from the config file.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run(Common),
    /// Run one experiment per value of the chosen axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', group = "axis")]
        algorithms: Option<Vec<Algorithm>>,
        #[arg(long, value_delimiter = ',', group = "axis")]
        lambdas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', group = "axis")]
        betas: Option<Vec<f64>>,
    },
    /// Gradient checks, policy invariants, MMD identities and partition audits.
    Selftest {
        /// Corrupts the layer-norm backward pass to confirm the checks catch it.
        #[arg(long, hide = true)]
        inject_layer_norm_fault: bool,
    },
    /// Write only the partition sidecar.
    Partition(Common),
}

fn workers(requested: Option<usize>) -> usize {
    requested
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, NonZeroUsize::get))
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = parse_config(&common.config).with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &common.output {
        cfg.output_dir = out.clone();
    }
    let dir = cfg.output_dir.clone();
    Ok((cfg, dir))
}

fn cmd_run(common: &Common) -> Result<()> {
    let (cfg, dir) = load(common)?;
    prepare_output_dir(&dir, common.force)?;
    let outcome = run_experiment(&cfg, workers(common.workers))?;
    write_outputs(&dir, &outcome)?;
    println!(
        "{}: best accuracy {:.4} over {} rounds, outputs in {}",
        cfg.algorithm,
        outcome.best_accuracy,
        outcome.reports.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_sweep(common: &Common, axis: SweepAxis) -> Result<()> {
    let (cfg, dir) = load(common)?;
    prepare_output_dir(&dir, common.force)?;
    let points = run_sweep(&cfg, &axis, workers(common.workers), Some(&dir))?;
    for p in &points {
        match &p.result {
            Ok(acc) => println!("{:<16} {acc:.4}", p.id),
            Err(e) => println!("{:<16} FAILED: {e}", p.id),
        }
    }
    if matches!(axis, SweepAxis::Lambdas(_)) && points.iter().all(|p| p.result.is_ok()) {
        let accs: Vec<f64> = points.iter().map(|p| *p.result.as_ref().unwrap()).collect();
        if let Some(pattern) = lambda_pattern(&accs) {
            println!("lambda pattern: {}", serde_json::to_string(&pattern)?.trim_matches('"'));
        }
    }
    let failed = points.iter().filter(|p| p.result.is_err()).count();
    if failed > 0 {
        bail!("{failed} of {} sweep points failed", points.len());
    }
    Ok(())
}

fn cmd_partition(common: &Common) -> Result<()> {
    let (cfg, dir) = load(common)?;
    prepare_output_dir(&dir, common.force)?;
    let sim = build_simulation(&cfg, 1)?;
    let path = dir.join(PARTITION_FILE);
    sim.plan().write_sidecar(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_selftest(fault: Option<Fault>) -> Result<()> {
    let rows = selftest::run(fault);
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &rows {
        println!("{:<width$}  {}  {}", r.name, if r.pass { "PASS" } else { "FAIL" }, r.detail);
    }
    let failing: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
    if !failing.is_empty() {
        bail!("failing checks: {}", failing.join(", "));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(c) => cmd_run(&c),
        Command::Sweep { common, algorithms, lambdas, betas } => {
            let axis = match (algorithms, lambdas, betas) {
                (Some(a), None, None) => SweepAxis::Algorithms(a),
                (None, Some(l), None) => SweepAxis::Lambdas(l),
                (None, None, Some(b)) => SweepAxis::Betas(b),
                _ => bail!("sweep needs exactly one of --algorithms, --lambdas, --betas"),
            };
            cmd_sweep(&common, axis)
        }
        Command::Selftest { inject_layer_norm_fault } => {
            cmd_selftest(inject_layer_norm_fault.then_some(Fault::LayerNormBackward))
        }
        Command::Partition(c) => cmd_partition(&c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
