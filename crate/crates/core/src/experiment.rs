//! Runs configured experiments and writes their output files.

use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::data::{PartitionPlan, PartitionScheme};
use crate::error::{Error, Result};
use crate::federation::{clients_jsonl, rounds_csv, Algorithm, RoundReport, Simulation};
use crate::output::write_atomic;

pub const ROUNDS_FILE: &str = "rounds.csv";
pub const CLIENTS_FILE: &str = "clients.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PARTITION_FILE: &str = "partition.txt";
pub const SWEEP_FILE: &str = "sweep.csv";

pub struct RunOutcome {
    pub config: ExperimentConfig,
    pub reports: Vec<RoundReport>,
    pub plan: PartitionPlan,
    pub best_accuracy: f64,
}

#[derive(Serialize)]
pub struct Summary<'a> {
    pub algorithm: Algorithm,
    pub best_accuracy: f64,
    pub final_accuracy: f64,
    pub rounds: usize,
    pub seed: u64,
    pub config: &'a ExperimentConfig,
}

impl RunOutcome {
    pub fn summary(&self) -> Summary<'_> {
        Summary {
            algorithm: self.config.algorithm,
            best_accuracy: self.best_accuracy,
            final_accuracy: self.reports.last().map_or(0.0, |r| r.acc_mean),
            rounds: self.reports.len(),
            seed: self.config.master_seed,
            config: &self.config,
        }
    }

    pub fn rounds_csv(&self) -> String {
        rounds_csv(&self.reports)
    }
}

pub fn build_simulation(cfg: &ExperimentConfig, workers: usize) -> Result<Simulation> {
    let dataset = cfg.load_dataset()?;
    let rc = cfg.run_config(&dataset)?;
    Simulation::new(rc, &dataset, workers)
}

pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<RunOutcome> {
    let mut sim = build_simulation(cfg, workers)?;
    sim.run()?;
    Ok(RunOutcome {
        config: cfg.clone(),
        best_accuracy: sim.best_accuracy(),
        plan: sim.plan().clone(),
        reports: sim.reports().to_vec(),
    })
}

/// Refuses to reuse an existing directory unless `force` is set.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && !force {
        return Err(Error::Usage(format!(
            "output directory {} already exists; pass --force to overwrite",
            dir.display()
        )));
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn write_outputs(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    write_atomic(&dir.join(ROUNDS_FILE), outcome.rounds_csv().as_bytes())?;
    write_atomic(&dir.join(CLIENTS_FILE), clients_jsonl(&outcome.reports)?.as_bytes())?;
    let summary = serde_json::to_string_pretty(&outcome.summary())
        .map_err(|e| Error::Input(e.to_string()))?;
    write_atomic(&dir.join(SUMMARY_FILE), format!("{summary}\n").as_bytes())?;
    outcome.plan.write_sidecar(&dir.join(PARTITION_FILE))
}

#[derive(Clone, Debug, PartialEq)]
pub enum SweepAxis {
    Algorithms(Vec<Algorithm>),
    Lambdas(Vec<f64>),
    Betas(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub id: String,
    pub value: f64,
    pub result: std::result::Result<f64, String>,
}

/// Shape of best accuracy as a function of λ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPattern {
    RiseThenFall,
    Plateau,
    Increasing,
    Decreasing,
}

/// Spread below this (in accuracy units) counts as a plateau.
pub const PLATEAU_TOLERANCE: f64 = 0.01;

pub fn lambda_pattern(accs: &[f64]) -> Option<LambdaPattern> {
    if accs.len() < 2 {
        return None;
    }
    let max = accs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = accs.iter().copied().fold(f64::INFINITY, f64::min);
    if max - min <= PLATEAU_TOLERANCE {
        return Some(LambdaPattern::Plateau);
    }
    let best = accs.iter().position(|&a| a == max).expect("max is present");
    Some(if best == 0 {
        LambdaPattern::Decreasing
    } else if best == accs.len() - 1 {
        LambdaPattern::Increasing
    } else {
        LambdaPattern::RiseThenFall
    })
}

fn point_config(base: &ExperimentConfig, axis: &SweepAxis, i: usize) -> Result<(String, f64, ExperimentConfig)> {
    let mut cfg = base.clone();
    let (id, value) = match axis {
        SweepAxis::Algorithms(a) => {
            cfg.algorithm = a[i];
            (a[i].id().to_string(), i as f64)
        }
        SweepAxis::Lambdas(l) => {
            cfg.training.lambda = l[i];
            (format!("lambda={}", l[i]), l[i])
        }
        SweepAxis::Betas(b) => {
            if !matches!(cfg.scheme()?, PartitionScheme::Dirichlet { .. }) {
                return Err(Error::config("partition.scheme", "a beta sweep needs the dirichlet scheme"));
            }
            cfg.partition.beta = Some(b[i]);
            (format!("beta={}", b[i]), b[i])
        }
    };
    cfg.validate()?;
    Ok((id, value, cfg))
}

fn axis_len(axis: &SweepAxis) -> usize {
    match axis {
        SweepAxis::Algorithms(a) => a.len(),
        SweepAxis::Lambdas(v) | SweepAxis::Betas(v) => v.len(),
    }
}

/// Runs every point with the same seed tree. A point that fails at run time
/// is recorded and the remaining points still run. With `out_dir`, each point's files go
/// to a subdirectory named after the point.
pub fn run_sweep(base: &ExperimentConfig, axis: &SweepAxis, workers: usize, out_dir: Option<&Path>) -> Result<Vec<SweepPoint>> {
    if axis_len(axis) == 0 {
        return Err(Error::Usage("sweep axis has no values".into()));
    }
    // Invalid axis values are rejected before anything runs.
    let configs = (0..axis_len(axis))
        .map(|i| point_config(base, axis, i))
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    for (id, value, cfg) in configs {
        let result = run_experiment(&cfg, workers).and_then(|o| {
            if let Some(dir) = out_dir {
                let sub = dir.join(&id);
                std::fs::create_dir_all(&sub)?;
                write_outputs(&sub, &o)?;
            }
            Ok(o.best_accuracy)
        });
        if let Err(e) = &result {
            log::error!("sweep point {id} failed: {e}");
        }
        points.push(SweepPoint {
            id,
            value,
            result: result.map_err(|e| e.to_string()),
        });
    }
    if let Some(dir) = out_dir {
        write_atomic(&dir.join(SWEEP_FILE), sweep_csv(&points).as_bytes())?;
    }
    Ok(points)
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("point,best_acc,status\n");
    for p in points {
        match &p.result {
            Ok(acc) => out.push_str(&format!("{},{acc},ok\n", p.id)),
            Err(_) => out.push_str(&format!("{},,failed\n", p.id)),
        }
    }
    out
}
