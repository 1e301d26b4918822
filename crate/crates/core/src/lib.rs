//! Energy-based active domain adaptation on dense feature vectors.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`] and [`energy`]: energy-based classifiers, free energy, the
//!   supervised and alignment losses, analytic and finite-difference gradients;
//! - [`selection`]: the free-energy/MvSM two-step query and baseline strategies;
//! - [`trainer`]: SGD with a moving free-energy threshold and the active loop;
//! - [`datagen`]: the rotated two-Gaussian benchmark and its CSV format;
//! - [`theory`]: numerical probes of the gradient-alignment results.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the 64-bit instantiation used by the experiments.

pub mod datagen;
pub mod energy;
pub mod error;
pub mod model;
pub mod sample;
pub mod scalar;
pub mod selection;
pub mod theory;
pub mod trainer;

pub use energy::{EnergyVector, LossBreakdown, ObjectiveConfig};
pub use error::{Error, Result};
pub use model::{Architecture, ModelParams};
pub use sample::{Domain, Sample};
pub use scalar::Scalar;
pub use selection::{PoolState, QueryStrategy, SelectionConfig};
pub use trainer::{EmaState, RoundMetrics, TrainConfig};

pub type Model = ModelParams<f64>;
pub type Model32 = ModelParams<f32>;
pub type Sample64 = Sample<f64>;
pub type Energies = EnergyVector<f64>;
pub type Pool = PoolState<f64>;
pub type Ema = EmaState<f64>;
