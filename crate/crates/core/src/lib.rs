//! Constrained, cost-aware multi-fidelity Bayesian optimization.
//!
//! One Gaussian-process emulator fuses every data source through a learned
//! latent embedding of the source label. Each iteration picks the point and
//! source with the best acquisition value per unit cost, and the run stops
//! once the optimum of the high-fidelity surrogate has stabilized.
//!
//! Formulas that do not need linear algebra are generic over [`Real`]; the
//! emulator and the optimization loop work in `f64`, and the aliases below
//! fix the generic types to `f64`.

pub mod acquisition;
pub mod benchmarks;
pub mod data;
pub mod driver;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod numopt;
pub mod scalar;
pub mod stopping;

pub use data::MfDataset;
pub use driver::{run, BoConfig, BoState, RunResult, StopReason};
pub use error::{Error, Result};
pub use gp::{fit, GpModel, InputSpace, MeanKind, MeanSpec, Prediction, Surrogate, TrainConfig, TrainingData};
pub use kernel::CategoricalSpec;
pub use scalar::Real;

pub type MixedPoint = data::MixedPoint<f64>;
pub type BoxBounds = numopt::BoxBounds<f64>;
pub type KernelParams = kernel::KernelParams<f64>;
pub type NuggetVector = kernel::NuggetVector<f64>;
pub type Embedding = kernel::Embedding<f64>;
pub type LbfgsConfig = numopt::LbfgsConfig<f64>;
pub type Minimum = numopt::Minimum<f64>;
