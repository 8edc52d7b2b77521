use rayon::prelude::*;

use super::{minimize, BoxBounds, LbfgsConfig, Minimum, Objective};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Runs L-BFGS from every start and returns the successful runs sorted by
/// objective value, ties kept in start order.
///
/// Starts are processed in parallel; the output does not depend on thread
/// scheduling.
pub fn multistart<T, O>(
    objective: &O,
    starts: &[Vec<T>],
    bounds: &BoxBounds<T>,
    config: &LbfgsConfig<T>,
) -> Result<Vec<Minimum<T>>>
where
    T: Real,
    O: Objective<T> + Sync + ?Sized,
{
    if starts.is_empty() {
        return Err(Error::InvalidInput("multistart needs at least one start".into()));
    }
    let runs: Vec<Result<Minimum<T>>> = starts.par_iter().map(|x0| minimize(objective, x0, bounds, config)).collect();
    let mut ok: Vec<Minimum<T>> = runs.into_iter().filter_map(Result::ok).collect();
    if ok.is_empty() {
        return Err(Error::NumericalFailure("every start failed".into()));
    }
    ok.sort_by(|a, b| a.f.partial_cmp(&b.f).unwrap_or(std::cmp::Ordering::Equal));
    Ok(ok)
}
