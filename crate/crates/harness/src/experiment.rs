//! Multi-strategy, multi-seed sweeps.

use eada_core::trainer::{run_active_loop, FreeEnergyHistogram};
use eada_core::RoundMetrics;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Strategy};
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub strategy: Strategy,
    pub seed: u64,
    pub rounds: Vec<RoundMetrics>,
    pub histograms: Vec<FreeEnergyHistogram>,
}

impl RunRecord {
    pub fn final_error(&self) -> f64 {
        self.rounds.last().map_or(f64::NAN, |m| m.target_error_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub strategy: Strategy,
    pub runs: usize,
    pub mean_final_target_error: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std_final_target_error: f64,
    pub final_target_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    /// Sorted by (strategy name, seed).
    pub runs: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
}

impl ExperimentResult {
    pub fn from_runs(mut runs: Vec<RunRecord>) -> Self {
        runs.sort_by(|a, b| (a.strategy.name(), a.seed).cmp(&(b.strategy.name(), b.seed)));
        let aggregates = aggregate(&runs);
        Self { runs, aggregates }
    }

    pub fn aggregate_for(&self, strategy: Strategy) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.strategy == strategy)
    }
}

/// Mean and sample standard deviation of the final target error per
/// strategy, in the order the strategies first appear in `runs`.
pub fn aggregate(runs: &[RunRecord]) -> Vec<Aggregate> {
    let mut out: Vec<Aggregate> = Vec::new();
    for run in runs {
        match out.iter_mut().find(|a| a.strategy == run.strategy) {
            Some(a) => a.final_target_errors.push(run.final_error()),
            None => out.push(Aggregate {
                strategy: run.strategy,
                runs: 0,
                mean_final_target_error: 0.0,
                std_final_target_error: 0.0,
                final_target_errors: vec![run.final_error()],
            }),
        }
    }
    for a in &mut out {
        let n = a.final_target_errors.len();
        let mean = a.final_target_errors.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            a.final_target_errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        a.runs = n;
        a.mean_final_target_error = mean;
        a.std_final_target_error = var.sqrt();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Sequential,
    Parallel,
}

pub fn run_one(cfg: &ExperimentConfig, strategy: Strategy, seed: u64) -> Result<RunRecord> {
    let data = cfg.data.load(seed)?;
    let run = run_active_loop(&data.source, &data.target, &cfg.run_config(strategy, seed))?;
    Ok(RunRecord { strategy, seed, rounds: run.rounds, histograms: run.histograms })
}

/// Validates the whole configuration, including budgets against the loaded
/// data, before any run starts.
pub fn preflight(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    for &seed in &cfg.seeds {
        let data = cfg.data.load(seed)?;
        if data.source.is_empty() || data.target.is_empty() {
            return Err(HarnessError::Config("source and target must both be non-empty".into()));
        }
        for &strategy in &cfg.strategies {
            cfg.run_config(strategy, seed).validate(data.target.len()).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if matches!(cfg.data, crate::config::DataSource::Csv { .. }) {
            break;
        }
    }
    Ok(())
}

pub fn run_experiment(cfg: &ExperimentConfig, schedule: Schedule) -> Result<ExperimentResult> {
    preflight(cfg)?;
    let jobs: Vec<(Strategy, u64)> =
        cfg.strategies.iter().flat_map(|&s| cfg.seeds.iter().map(move |&seed| (s, seed))).collect();
    let runs: Vec<RunRecord> = match schedule {
        Schedule::Sequential => jobs.iter().map(|&(s, seed)| run_one(cfg, s, seed)).collect::<Result<_>>()?,
        Schedule::Parallel => jobs.par_iter().map(|&(s, seed)| run_one(cfg, s, seed)).collect::<Result<_>>()?,
    };
    Ok(ExperimentResult::from_runs(runs))
}
