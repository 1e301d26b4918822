//! Experiment harness: JSON configs, multi-seed sweeps, CSV/JSON result
//! files, SVG charts and the theory probes, behind the `eada` binary.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod plot;
pub mod verify;

pub use config::{DataSource, ExperimentConfig, Strategy};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, ExperimentResult, RunRecord, Schedule};
