//! Experiment configuration, read from JSON.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use eada_core::datagen::{gen_toy, load_csv, SyntheticSpec, ToyDomains};
use eada_core::{QueryStrategy, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Variable that overrides the output directory of every subcommand.
pub const OUTPUT_DIR_ENV: &str = "EADA_OUTPUT_DIR";

/// A baseline with no target labels, or one of the query strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    SourceOnly,
    Random,
    Eada,
    Entropy,
    Bvsb,
    #[serde(rename = "coreset")]
    CoreSet,
}

impl Strategy {
    pub const ALL: [Strategy; 6] =
        [Strategy::SourceOnly, Strategy::Random, Strategy::Eada, Strategy::Entropy, Strategy::Bvsb, Strategy::CoreSet];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::SourceOnly => "source_only",
            Strategy::Random => "random",
            Strategy::Eada => "eada",
            Strategy::Entropy => "entropy",
            Strategy::Bvsb => "bvsb",
            Strategy::CoreSet => "coreset",
        }
    }

    pub fn query(self) -> Option<QueryStrategy> {
        match self {
            Strategy::SourceOnly => None,
            Strategy::Random => Some(QueryStrategy::Random),
            Strategy::Eada => Some(QueryStrategy::Eada),
            Strategy::Entropy => Some(QueryStrategy::Entropy),
            Strategy::Bvsb => Some(QueryStrategy::Bvsb),
            Strategy::CoreSet => Some(QueryStrategy::CoreSet),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HarnessError::Format(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Rotated two-Gaussian toy. Each run seed offsets `seed`, so every seed
    /// sees a fresh draw.
    Synthetic(SyntheticSpec),
    /// Fixed datasets shared by all seeds; relative paths resolve against
    /// the config file.
    Csv { source: PathBuf, target: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

impl DataSource {
    pub fn load(&self, seed: u64) -> Result<ToyDomains<f64>> {
        match self {
            DataSource::Synthetic(spec) => {
                let spec = SyntheticSpec { seed: spec.seed.wrapping_add(seed), ..spec.clone() };
                Ok(gen_toy(&spec)?)
            }
            DataSource::Csv { source, target } => {
                let source = load_csv(source)?;
                let target = load_csv(target)?;
                Ok(ToyDomains { source, target })
            }
        }
    }

    fn resolve_against(&mut self, base: &Path) {
        if let DataSource::Csv { source, target } = self {
            for p in [source, target] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub train: TrainConfig,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Keep the free-energy alignment term for the baselines too. Off by
    /// default: only EADA trains with it.
    pub align_baselines: bool,
}

impl Default for ExperimentConfig {
    /// The toy benchmark: 3 rounds of 2% after epochs 12, 13 and 14 of 15,
    /// five seeds, every strategy.
    fn default() -> Self {
        let train = TrainConfig {
            epochs: 15,
            selection_rounds: BTreeSet::from([12, 13, 14]),
            selection: eada_core::SelectionConfig { per_round_budget_percent: 2.0, ..Default::default() },
            ..Default::default()
        };
        Self {
            data: DataSource::default(),
            train,
            strategies: Strategy::ALL.to_vec(),
            seeds: (0..5).collect(),
            output_dir: PathBuf::from("results"),
            align_baselines: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            cfg.data.resolve_against(dir);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("at least one seed is required".into()));
        }
        if self.strategies.is_empty() {
            return Err(HarnessError::Config("at least one strategy is required".into()));
        }
        let unique: BTreeSet<_> = self.strategies.iter().collect();
        if unique.len() != self.strategies.len() {
            return Err(HarnessError::Config("duplicate strategy".into()));
        }
        let unique: BTreeSet<_> = self.seeds.iter().collect();
        if unique.len() != self.seeds.len() {
            return Err(HarnessError::Config("duplicate seed".into()));
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if self.train.epochs == 0 {
            return Err(HarnessError::Config("epochs must be positive".into()));
        }
        if !(self.train.learning_rate.is_finite() && self.train.learning_rate >= 0.0) {
            return Err(HarnessError::Config("learning_rate must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Training configuration of one run.
    pub fn run_config(&self, strategy: Strategy, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig { seed, ..self.train.clone() };
        match strategy.query() {
            None => {
                cfg.selection_rounds.clear();
                cfg.objective.gamma = 0.0;
            }
            Some(q) => {
                cfg.selection.strategy = q;
                if q != QueryStrategy::Eada && !self.align_baselines {
                    cfg.objective.gamma = 0.0;
                }
            }
        }
        cfg
    }
}
