//! Inner optimization machinery: projected L-BFGS, multi-start driver,
//! finite-difference gradients and Sobol sampling.

mod bounds;
mod fd;
mod lbfgs;
mod multistart;
mod sobol;
mod sobol_table;

pub use bounds::BoxBounds;
pub use fd::{fd_gradient, DEFAULT_FD_STEP};
pub use lbfgs::{lbfgs_minimize, minimize, FnObjective, LbfgsConfig, Minimum, Objective};
pub use multistart::multistart;
pub use sobol::{sobol_sample, Sobol, MAX_SOBOL_DIM};
