//! Dispatch of the theory probes.

use std::fmt;
use std::str::FromStr;

use eada_core::datagen::SyntheticSpec;
use eada_core::theory::{
    bias_suite, lemma1_suite, lemma2_suite, lemma3_suite, theorem1_suite, InstanceSampling, ProbeReport, Theorem1Settings,
};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    Lemma1,
    Lemma2,
    Lemma3,
    Theorem1,
    Bias,
}

impl Probe {
    pub const ALL: [Probe; 5] = [Probe::Lemma1, Probe::Lemma2, Probe::Lemma3, Probe::Theorem1, Probe::Bias];

    pub fn name(self) -> &'static str {
        match self {
            Probe::Lemma1 => "lemma1",
            Probe::Lemma2 => "lemma2",
            Probe::Lemma3 => "lemma3",
            Probe::Theorem1 => "theorem1",
            Probe::Bias => "bias",
        }
    }
}

impl fmt::Display for Probe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Probe {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Probe::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<_> = Probe::ALL.iter().map(|p| p.name()).collect();
            HarnessError::Usage(format!("unknown probe `{s}`, expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub trials: usize,
    pub seed: u64,
    /// Step size of the single descent step.
    pub eta: f64,
    /// At most this many passing trials are kept in the report; violations
    /// are always kept.
    pub detail_limit: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { trials: 1000, seed: 0, eta: 0.01, detail_limit: 32 }
    }
}

/// Exit status for a finished probe: 2 when any trial violated its claim.
pub fn exit_status(report: &ProbeReport) -> u8 {
    if report.violations > 0 {
        2
    } else {
        0
    }
}

/// Ratio the target/source free-energy gap must exceed over the split gap.
pub const BIAS_RATIO: f64 = 5.0;

pub fn run_probe(probe: Probe, opts: &VerifyOptions) -> Result<ProbeReport> {
    let sampling = InstanceSampling::default();
    let report = match probe {
        Probe::Lemma1 => lemma1_suite(opts.trials, opts.seed, &sampling, opts.detail_limit)?,
        Probe::Lemma2 => lemma2_suite(opts.trials, opts.seed, opts.eta, &sampling, opts.detail_limit)?,
        Probe::Lemma3 => lemma3_suite(opts.trials, opts.seed, opts.detail_limit)?,
        Probe::Theorem1 => theorem1_suite(opts.trials, opts.seed, &Theorem1Settings::default(), opts.detail_limit)?,
        Probe::Bias => bias_report(opts)?,
    };
    Ok(report)
}

/// One bias probe per trial on the default toy, trial `i` using seed
/// `seed + i` for both the data and the source split.
fn bias_report(opts: &VerifyOptions) -> Result<ProbeReport> {
    let base = ExperimentConfig::default();
    let mut merged = ProbeReport::empty(Probe::Bias.name(), opts.seed);
    for i in 0..opts.trials {
        let seed = opts.seed.wrapping_add(i as u64);
        let spec = SyntheticSpec { seed, ..SyntheticSpec::default() };
        let cfg = base.run_config(crate::config::Strategy::SourceOnly, seed);
        let one = bias_suite(&spec, &cfg, BIAS_RATIO)?;
        merged.worst_margin = if merged.trials == 0 { one.worst_margin } else { merged.worst_margin.min(one.worst_margin) };
        merged.trials += one.trials;
        merged.violations += one.violations;
        if one.violations > 0 || merged.details.len() < opts.detail_limit {
            merged.details.extend(one.details);
        }
    }
    Ok(merged)
}
