//! Post-acquisition optimization of the high-fidelity surrogate and the
//! variance-based stopping rule built on its optimum sequence.

use serde::{Deserialize, Serialize};

use crate::acquisition::categorical_candidates;
use crate::data::MixedPoint;
use crate::error::{invalid, Result};
use crate::gp::Surrogate;
use crate::kernel::CategoricalSpec;
use crate::numopt::{multistart, BoxBounds, LbfgsConfig, Objective, Sobol};
use crate::scalar::{count, lit, Real};

/// Window length and variance threshold of the stopping test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopConfig<T = f64> {
    pub window: usize,
    pub threshold: T,
}

impl<T: Real> Default for StopConfig<T> {
    fn default() -> Self {
        Self { window: 10, threshold: lit(0.01) }
    }
}

impl<T: Real> StopConfig<T> {
    pub fn new(window: usize, threshold: T) -> Result<Self> {
        if window < 2 {
            return Err(invalid("stopping window must be at least 2"));
        }
        if !(threshold > T::zero()) || !threshold.is_finite() {
            return Err(invalid("stopping threshold must be positive"));
        }
        Ok(Self { window, threshold })
    }
}

/// Population variance; zero for an empty slice.
pub fn population_variance<T: Real>(values: &[T]) -> T {
    if values.is_empty() {
        return T::zero();
    }
    let n = count::<T>(values.len());
    let mean = values.iter().fold(T::zero(), |a, v| a + *v) / n;
    values.iter().fold(T::zero(), |a, v| a + (*v - mean) * (*v - mean)) / n
}

/// Standardizes the whole history with its mean and population standard
/// deviation; a (numerically) constant history maps to zeros.
pub fn normalize_history<T: Real>(history: &[T]) -> Vec<T> {
    if history.is_empty() {
        return Vec::new();
    }
    let n = count::<T>(history.len());
    let mean = history.iter().fold(T::zero(), |a, v| a + *v) / n;
    let tau = population_variance(history).sqrt();
    if !(tau >= lit(1e-12)) {
        return vec![T::zero(); history.len()];
    }
    history.iter().map(|v| (*v - mean) / tau).collect()
}

/// True once at least `window` values exist and the population variance of
/// the last `window` normalized values is below the threshold.
pub fn should_stop<T: Real>(normalized: &[T], config: &StopConfig<T>) -> bool {
    let q = normalized.len();
    if q < config.window {
        return false;
    }
    population_variance(&normalized[q - config.window..]) < config.threshold
}

/// Smaller of the high-fidelity incumbent and the feasible post-acquisition
/// optima among the last `window` records.
pub fn final_optimum(hf_incumbent: f64, records: &[PaoRecord], window: usize) -> f64 {
    let start = records.len().saturating_sub(window);
    records[start..].iter().filter(|r| r.feasible).map(|r| r.value).fold(hf_incumbent, f64::min)
}

/// Outcome of one post-acquisition optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaoRecord {
    pub iteration: usize,
    /// Minimizer in original coordinates, labeled with the high-fidelity
    /// source.
    pub point: MixedPoint,
    /// High-fidelity surrogate mean at `point`.
    pub value: f64,
    /// All constraint means at `point` are non-positive.
    pub feasible: bool,
    pub constraint_means: Vec<f64>,
    /// Best distinct local minimizers (unit coordinates and categorical
    /// levels), reused as starts at the next iteration.
    #[serde(default)]
    pub minimizers: Vec<(Vec<f64>, Vec<usize>)>,
}

/// Settings of the post-acquisition optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaoConfig {
    /// Minimizers carried over to the next iteration.
    pub look_back: usize,
    /// Random starts used at the first iteration.
    pub initial_starts: usize,
    /// Exact-penalty weight in standardized units.
    pub penalty: f64,
    /// Constraints are pushed this far (standardized units) inside the
    /// feasible region so that minimizers on the boundary test feasible.
    pub margin: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for PaoConfig {
    fn default() -> Self {
        Self { look_back: 10, initial_starts: 30, penalty: 1e3, margin: 1e-6, max_iter: 200, tol: 1e-8, seed: 0 }
    }
}

/// Models and search space of a post-acquisition optimization.
pub struct PaoProblem<'a> {
    pub objective: &'a dyn Surrogate,
    pub constraints: Vec<&'a dyn Surrogate>,
    pub bounds: BoxBounds,
    pub categorical: CategoricalSpec,
    pub hf: usize,
}

struct Penalized<'p, 'a> {
    problem: &'p PaoProblem<'a>,
    t: &'p [usize],
    scale: f64,
    g_scale: Vec<f64>,
    config: &'p PaoConfig,
}

impl Penalized<'_, '_> {
    fn eval(&self, x: &[f64], grad: bool) -> (f64, Vec<f64>) {
        let p = self.problem;
        let o = p.objective.predict_unit_grad(x, self.t, p.hf, false);
        let mut f = o.mean / self.scale;
        let mut d: Vec<f64> = if grad { o.d_mean.iter().map(|v| v / self.scale).collect() } else { Vec::new() };
        for (g, s) in p.constraints.iter().zip(&self.g_scale) {
            let c = g.predict_unit_grad(x, self.t, p.hf, false);
            let v = c.mean / s + self.config.margin;
            if v > 0.0 {
                f += self.config.penalty * v;
                if grad {
                    d.iter_mut().zip(&c.d_mean).for_each(|(a, b)| *a += self.config.penalty * b / s);
                }
            }
        }
        (f, d)
    }
}

impl Objective<f64> for Penalized<'_, '_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x, false).0
    }

    fn value_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        self.eval(x, true)
    }
}

fn distinct(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) > 1e-6
}

/// Minimizes the high-fidelity surrogate mean subject to the constraint
/// means via an exact penalty.
///
/// Starts are the feasible high-fidelity samples plus the previous record's
/// minimizers, or random points and the feasible samples when there is no
/// previous record. Returns the best feasible minimizer, or the least
/// violating one flagged infeasible.
pub fn run_pao(
    problem: &PaoProblem,
    iteration: usize,
    feasible_hf: &[MixedPoint],
    previous: Option<&PaoRecord>,
    config: &PaoConfig,
) -> Result<PaoRecord> {
    let dx = problem.bounds.dim();
    if problem.objective.input_dim() != dx {
        return Err(invalid("bounds do not match the model input dimension"));
    }
    let mut starts: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
    for p in feasible_hf {
        if p.x.len() != dx {
            return Err(invalid("start point has the wrong dimension"));
        }
        starts.push((problem.bounds.to_unit(&p.x), p.t.clone()));
    }
    let carried = previous.map(|r| r.minimizers.as_slice()).unwrap_or(&[]);
    starts.extend(carried.iter().take(config.look_back).cloned());
    if previous.is_none() || starts.is_empty() {
        let cats = categorical_candidates(&problem.categorical, 64, config.seed)?;
        let mut sobol = Sobol::new(dx, Some(config.seed))?;
        for i in 0..config.initial_starts.max(1) {
            starts.push((sobol.next_point::<f64>(), cats[i % cats.len()].clone()));
        }
    }

    let scale = problem.objective.output_scale().max(1e-300);
    let g_scale: Vec<f64> = problem.constraints.iter().map(|g| g.output_scale().max(1e-300)).collect();
    let unit = BoxBounds::unit(dx);
    let lbfgs = LbfgsConfig::default().with_tol(config.tol).with_max_iter(config.max_iter);

    // group starts by categorical assignment, keeping first-seen order
    let mut groups: Vec<(Vec<usize>, Vec<Vec<f64>>)> = Vec::new();
    for (x, t) in starts {
        match groups.iter_mut().find(|(gt, _)| *gt == t) {
            Some((_, xs)) => xs.push(x),
            None => groups.push((t, vec![x])),
        }
    }
    let mut found: Vec<(f64, Vec<f64>, Vec<usize>)> = Vec::new();
    for (t, xs) in &groups {
        let obj = Penalized { problem, t, scale, g_scale: g_scale.clone(), config };
        match multistart(&obj, xs, &unit, &lbfgs) {
            Ok(runs) => found.extend(runs.into_iter().map(|m| (m.f, m.x, t.clone()))),
            Err(_) => found.extend(xs.iter().map(|x| (obj.value(x), x.clone(), t.clone()))),
        }
    }
    found.retain(|(f, _, _)| f.is_finite());
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    if found.is_empty() {
        return Err(invalid("post-acquisition objective is not finite at any start"));
    }

    let mut minimizers: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
    for (_, x, t) in &found {
        if minimizers.len() == config.look_back {
            break;
        }
        if minimizers.iter().all(|(m, mt)| mt != t || distinct(m, x)) {
            minimizers.push((x.clone(), t.clone()));
        }
    }

    let assess = |x: &[f64], t: &[usize]| {
        let g: Vec<f64> = problem.constraints.iter().map(|c| c.predict_unit(x, t, problem.hf).mean).collect();
        let viol: f64 = g.iter().map(|v| v.max(0.0)).sum();
        (g, viol)
    };
    let mut best: Option<(usize, Vec<f64>)> = None;
    let mut least: Option<(usize, f64, Vec<f64>)> = None;
    for (i, (_, x, t)) in found.iter().enumerate() {
        let (g, viol) = assess(x, t);
        if viol == 0.0 {
            best = Some((i, g));
            break;
        }
        if least.as_ref().is_none_or(|l| viol < l.1) {
            least = Some((i, viol, g));
        }
    }
    let (idx, feasible, constraint_means) = match (best, least) {
        (Some((i, g)), _) => (i, true, g),
        (None, Some((i, _, g))) => (i, false, g),
        (None, None) => unreachable!("found is non-empty"),
    };
    let (_, x, t) = &found[idx];
    let value = problem.objective.predict_unit(x, t, problem.hf).mean;
    let mut xo = problem.bounds.from_unit(x);
    problem.bounds.project(&mut xo);
    Ok(PaoRecord {
        iteration,
        point: MixedPoint::new(xo, t.clone(), problem.hf),
        value,
        feasible,
        constraint_means,
        minimizers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{Prediction, PredictionGrad};
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_history(&[0.0, 2.0]), vec![-1.0, 1.0]);
        assert_eq!(normalize_history(&[5.0, 5.0, 5.0]), vec![0.0; 3]);
        let n = normalize_history(&[1.0, 2.0, 3.0]);
        let s = (2.0f64 / 3.0).sqrt();
        assert!((n[0] + 1.0 / s).abs() < 1e-12 && n[1].abs() < 1e-12 && (n[2] - 1.0 / s).abs() < 1e-12);
        assert!((n[2] - 1.224744871391589).abs() < 1e-12);
    }

    #[test]
    fn stop_examples() {
        let cfg = StopConfig::new(3, 0.01).unwrap();
        assert!(should_stop(&[0.5, 0.1, 0.1, 0.1], &cfg));
        assert!(!should_stop(&[0.1, 0.1], &cfg));
        assert!(!should_stop(&[-1.0, 0.0, 1.0], &cfg));
        assert!((population_variance(&[-1.0f64, 0.0, 1.0]) - 2.0 / 3.0).abs() < 1e-15);
        assert!(StopConfig::new(1, 0.01).is_err());
        assert!(StopConfig::new(3, 0.0).is_err());
    }

    fn record(value: f64, feasible: bool) -> PaoRecord {
        PaoRecord {
            iteration: 0,
            point: MixedPoint::continuous(vec![0.0], 0),
            value,
            feasible,
            constraint_means: vec![],
            minimizers: vec![],
        }
    }

    #[test]
    fn final_optimum_examples() {
        let recs = vec![record(0.1, true), record(0.8, true), record(0.9, true)];
        assert_eq!(final_optimum(1.0, &recs, 2), 0.8);
        assert_eq!(final_optimum(1.0, &[record(0.2, false)], 10), 1.0);
        assert_eq!(final_optimum(0.5, &[record(0.7, true), record(0.9, true)], 10), 0.5);
    }

    struct Analytic {
        mean: fn(&[f64]) -> f64,
        grad: fn(&[f64]) -> Vec<f64>,
    }

    impl Surrogate for Analytic {
        fn input_dim(&self) -> usize {
            2
        }
        fn predict_unit(&self, x: &[f64], _t: &[usize], _s: usize) -> Prediction {
            Prediction { mean: (self.mean)(x), variance: 0.0 }
        }
        fn predict_unit_grad(&self, x: &[f64], _t: &[usize], _s: usize, _v: bool) -> PredictionGrad {
            PredictionGrad { mean: (self.mean)(x), variance: 0.0, d_mean: (self.grad)(x), d_variance: vec![0.0; 2] }
        }
    }

    fn quad() -> Analytic {
        Analytic {
            mean: |x| (x[0] - 0.3).powi(2) + 2.0 * (x[1] - 0.6).powi(2) + 1.0,
            grad: |x| vec![2.0 * (x[0] - 0.3), 4.0 * (x[1] - 0.6)],
        }
    }

    #[test]
    fn pao_finds_quadratic_minimum() {
        let obj = quad();
        let p = PaoProblem {
            objective: &obj,
            constraints: vec![],
            bounds: BoxBounds::unit(2),
            categorical: CategoricalSpec::empty(),
            hf: 0,
        };
        let r = run_pao(&p, 1, &[], None, &PaoConfig::default()).unwrap();
        assert!((r.point.x[0] - 0.3).abs() < 1e-4 && (r.point.x[1] - 0.6).abs() < 1e-4);
        assert!((r.value - 1.0).abs() < 1e-8);
        assert!(r.feasible);
        assert!(!r.minimizers.is_empty() && r.minimizers.len() <= 10);
    }

    #[test]
    fn pao_respects_constraint() {
        let obj = Analytic { mean: |x| x[0], grad: |_| vec![1.0, 0.0] };
        let con = Analytic { mean: |x| x[0] - 0.5, grad: |_| vec![1.0, 0.0] };
        let p = PaoProblem {
            objective: &obj,
            constraints: vec![&con],
            bounds: BoxBounds::unit(2),
            categorical: CategoricalSpec::empty(),
            hf: 0,
        };
        let r = run_pao(&p, 1, &[], None, &PaoConfig::default()).unwrap();
        assert!(r.point.x[0] < 1e-6);
        assert!(r.feasible);
    }

    #[test]
    fn pao_boundary_minimizer_tests_feasible() {
        // objective pulls toward x0 = 1, constraint caps it at 0.5
        let obj = Analytic { mean: |x| -x[0], grad: |_| vec![-1.0, 0.0] };
        let con = Analytic { mean: |x| x[0] - 0.5, grad: |_| vec![1.0, 0.0] };
        let p = PaoProblem {
            objective: &obj,
            constraints: vec![&con],
            bounds: BoxBounds::unit(2),
            categorical: CategoricalSpec::empty(),
            hf: 0,
        };
        let r = run_pao(&p, 1, &[], None, &PaoConfig::default()).unwrap();
        assert!(r.feasible);
        assert!((r.point.x[0] - 0.5).abs() < 1e-4, "{:?}", r.point.x);
        assert!(r.constraint_means[0] <= 0.0);
    }

    #[test]
    fn warm_start_cannot_regress() {
        let obj = quad();
        let p = PaoProblem {
            objective: &obj,
            constraints: vec![],
            bounds: BoxBounds::unit(2),
            categorical: CategoricalSpec::empty(),
            hf: 0,
        };
        let first = run_pao(&p, 1, &[], None, &PaoConfig::default()).unwrap();
        let second = run_pao(&p, 2, &[], Some(&first), &PaoConfig::default()).unwrap();
        assert!(second.value <= first.value + 1e-6);
    }

    #[test]
    fn infeasible_everywhere_flags_record() {
        let obj = quad();
        let con = Analytic { mean: |x| 1.0 + x[0], grad: |_| vec![1.0, 0.0] };
        let p = PaoProblem {
            objective: &obj,
            constraints: vec![&con],
            bounds: BoxBounds::unit(2),
            categorical: CategoricalSpec::empty(),
            hf: 0,
        };
        let r = run_pao(&p, 1, &[], None, &PaoConfig::default()).unwrap();
        assert!(!r.feasible);
        assert!(r.point.x[0] < 1e-6);
    }

    #[test]
    fn result_not_worse_than_feasible_starts() {
        let obj = Analytic {
            mean: |x| (3.0 * x[0]).sin() + (5.0 * x[1]).cos(),
            grad: |x| vec![3.0 * (3.0 * x[0]).cos(), -5.0 * (5.0 * x[1]).sin()],
        };
        let p = PaoProblem {
            objective: &obj,
            constraints: vec![],
            bounds: BoxBounds::unit(2),
            categorical: CategoricalSpec::empty(),
            hf: 0,
        };
        let starts: Vec<MixedPoint> =
            (0..5).map(|i| MixedPoint::continuous(vec![0.2 * i as f64, 0.9 - 0.15 * i as f64], 0)).collect();
        let r = run_pao(&p, 3, &starts, Some(&record(0.0, true)), &PaoConfig::default()).unwrap();
        let best_start = starts.iter().map(|s| (obj.mean)(&s.x)).fold(f64::INFINITY, f64::min);
        assert!(r.value <= best_start + 1e-12);
    }

    proptest! {
        #[test]
        fn normalization_is_affine_invariant(
            h in prop::collection::vec(-100.0f64..100.0, 1..40),
            a in 0.01f64..100.0,
            b in -1000.0f64..1000.0,
        ) {
            let n1 = normalize_history(&h);
            let t: Vec<f64> = h.iter().map(|v| a * v + b).collect();
            let n2 = normalize_history(&t);
            let spread = population_variance(&h).sqrt();
            prop_assume!(spread > 1e-6);
            for (x, y) in n1.iter().zip(&n2) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn stopping_is_monotone_in_threshold(
            h in prop::collection::vec(-5.0f64..5.0, 2..30),
            e1 in 1e-4f64..1.0,
            factor in 1.0f64..10.0,
        ) {
            let n = normalize_history(&h);
            let c1 = StopConfig::new(5, e1).unwrap();
            let c2 = StopConfig::new(5, e1 * factor).unwrap();
            if should_stop(&n, &c1) {
                prop_assert!(should_stop(&n, &c2));
            }
        }
    }
}
