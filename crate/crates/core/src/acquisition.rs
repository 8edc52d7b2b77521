//! Per-source acquisition values and the choice of the next sample.
//!
//! Low-fidelity sources are scored by the exploration part of expected
//! improvement, the high-fidelity source by plain improvement. A point whose
//! predicted constraints are violated is scored by minus the total predicted
//! violation instead. Each value is divided by the source's sampling cost.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::MixedPoint;
use crate::error::{invalid, Error, Result};
use crate::gp::Surrogate;
use crate::kernel::CategoricalSpec;
use crate::numopt::{multistart, BoxBounds, LbfgsConfig, Objective, Sobol};
use crate::scalar::{lit, Real};

/// Posterior standard deviations below this are treated as zero.
pub const TAU_GUARD: f64 = 1e-12;

/// Standard normal density.
pub fn normal_pdf<T: Real>(z: T) -> T {
    (-(z * z) / lit(2.0)).exp() / (lit::<T>(2.0) * T::PI()).sqrt()
}

/// `tau * phi((y_star - mu) / tau)`, zero when `tau` is below the guard.
pub fn lf_value<T: Real>(mu: T, tau: T, y_star: T) -> T {
    if !(tau >= lit(TAU_GUARD)) {
        return T::zero();
    }
    tau * normal_pdf((y_star - mu) / tau)
}

/// `y_star - mu`.
pub fn hf_value<T: Real>(mu: T, y_star: T) -> T {
    y_star - mu
}

/// Minus the summed positive parts of the constraint means.
pub fn violation_value<T: Real>(constraint_means: &[T]) -> T {
    -constraint_means.iter().fold(T::zero(), |acc, g| acc + g.max(T::zero()))
}

/// Whether every constraint mean is non-positive (vacuously true for none).
pub fn is_predicted_feasible<T: Real>(constraint_means: &[T]) -> bool {
    constraint_means.iter().all(|g| *g <= T::zero())
}

/// Feasible branch value when all constraint means are non-positive, the
/// violation value otherwise.
pub fn constrained_value<T: Real>(feasible_branch: T, constraint_means: &[T]) -> T {
    if is_predicted_feasible(constraint_means) {
        feasible_branch
    } else {
        violation_value(constraint_means)
    }
}

/// Acquisition value per unit cost.
pub fn composite_value<T: Real>(af: T, cost: T) -> Result<T> {
    if !(cost > T::zero()) || !cost.is_finite() {
        return Err(invalid("sampling cost must be positive"));
    }
    Ok(af / cost)
}

/// Models and bookkeeping the acquisition functions read.
///
/// Points handed to the methods are in original coordinates; `bounds` maps
/// them to the unit cube the models work in.
pub struct AcqContext<'a> {
    pub objective: &'a dyn Surrogate,
    pub constraints: Vec<&'a dyn Surrogate>,
    /// Incumbent objective value per source.
    pub incumbents: Vec<f64>,
    pub costs: Vec<f64>,
    /// Index of the high-fidelity source.
    pub hf: usize,
    pub bounds: BoxBounds,
    pub categorical: CategoricalSpec,
}

impl<'a> AcqContext<'a> {
    pub fn new(
        objective: &'a dyn Surrogate,
        constraints: Vec<&'a dyn Surrogate>,
        incumbents: Vec<f64>,
        costs: Vec<f64>,
        hf: usize,
        bounds: BoxBounds,
        categorical: CategoricalSpec,
    ) -> Result<Self> {
        if costs.is_empty() || incumbents.len() != costs.len() {
            return Err(invalid("one incumbent and one cost per source are required"));
        }
        if costs.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
            return Err(invalid("costs must be positive"));
        }
        if hf >= costs.len() {
            return Err(invalid(format!("high-fidelity source {hf} out of range")));
        }
        if bounds.dim() != objective.input_dim() {
            return Err(invalid("bounds do not match the model input dimension"));
        }
        Ok(Self { objective, constraints, incumbents, costs, hf, bounds, categorical })
    }

    pub fn n_sources(&self) -> usize {
        self.costs.len()
    }

    fn unit(&self, u: &MixedPoint) -> Result<Vec<f64>> {
        if u.x.len() != self.bounds.dim() || !u.is_finite() {
            return Err(invalid("point does not match the input space"));
        }
        self.categorical.validate(&u.t)?;
        Ok(self.bounds.to_unit(&u.x))
    }

    fn check_source(&self, j: usize) -> Result<()> {
        if j >= self.n_sources() {
            return Err(invalid(format!("source {j} out of range")));
        }
        Ok(())
    }

    /// Exploration value for a low-fidelity source.
    pub fn af_lf(&self, u: &MixedPoint, j: usize) -> Result<f64> {
        self.check_source(j)?;
        if j == self.hf {
            return Err(invalid("af_lf is defined for low-fidelity sources only"));
        }
        let p = self.objective.predict_unit(&self.unit(u)?, &u.t, j);
        Ok(lf_value(p.mean, p.std_dev(), self.incumbents[j]))
    }

    /// Improvement value for the high-fidelity source.
    pub fn af_hf(&self, u: &MixedPoint) -> Result<f64> {
        let p = self.objective.predict_unit(&self.unit(u)?, &u.t, self.hf);
        Ok(hf_value(p.mean, self.incumbents[self.hf]))
    }

    /// Constraint means of source `j` at `u`.
    pub fn constraint_means(&self, u: &MixedPoint, j: usize) -> Result<Vec<f64>> {
        self.check_source(j)?;
        let x = self.unit(u)?;
        Ok(self.constraints.iter().map(|g| g.predict_unit(&x, &u.t, j).mean).collect())
    }

    pub fn af_constrained(&self, u: &MixedPoint, j: usize) -> Result<f64> {
        let g = self.constraint_means(u, j)?;
        if !is_predicted_feasible(&g) {
            return Ok(violation_value(&g));
        }
        if j == self.hf {
            self.af_hf(u)
        } else {
            self.af_lf(u, j)
        }
    }

    pub fn composite(&self, u: &MixedPoint, j: usize) -> Result<f64> {
        composite_value(self.af_constrained(u, j)?, self.costs[j])
    }

    /// Constrained acquisition value (not divided by cost) and its gradient
    /// with respect to unit-cube coordinates.
    pub fn af_unit_grad(&self, x: &[f64], t: &[usize], j: usize) -> (f64, Vec<f64>) {
        let dx = x.len();
        let mut viol = 0.0;
        let mut dviol = vec![0.0; dx];
        let mut feasible = true;
        for g in &self.constraints {
            let p = g.predict_unit_grad(x, t, j, false);
            if p.mean > 0.0 {
                feasible = false;
                viol += p.mean;
                dviol.iter_mut().zip(&p.d_mean).for_each(|(a, b)| *a += b);
            }
        }
        if !feasible {
            return (-viol, dviol.into_iter().map(|v| -v).collect());
        }
        let y_star = self.incumbents[j];
        if j == self.hf {
            let p = self.objective.predict_unit_grad(x, t, j, false);
            return (hf_value(p.mean, y_star), p.d_mean.iter().map(|d| -d).collect());
        }
        let p = self.objective.predict_unit_grad(x, t, j, true);
        let tau = p.variance.max(0.0).sqrt();
        if tau < TAU_GUARD {
            return (0.0, vec![0.0; dx]);
        }
        let z = (y_star - p.mean) / tau;
        let phi = normal_pdf(z);
        let grad = (0..dx)
            .map(|i| {
                let dtau = p.d_variance[i] / (2.0 * tau);
                phi * ((1.0 + z * z) * dtau + z * p.d_mean[i])
            })
            .collect();
        (tau * phi, grad)
    }
}

/// Settings of the inner maximization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposeConfig {
    pub starts_per_source: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// Enumerate categorical combinations up to this count.
    pub max_enumerated: usize,
    /// Additional starts in unit coordinates, tried for every source.
    #[serde(default)]
    pub extra_starts: Vec<Vec<f64>>,
}

impl Default for ProposeConfig {
    fn default() -> Self {
        Self { starts_per_source: 20, max_iter: 100, tol: 1e-7, seed: 0, max_enumerated: 64, extra_starts: Vec::new() }
    }
}

/// Chosen point, its source and its composite value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub point: MixedPoint,
    pub value: f64,
}

impl Proposal {
    pub fn source(&self) -> usize {
        self.point.source
    }
}

struct NegAf<'c, 'a> {
    ctx: &'c AcqContext<'a>,
    t: &'c [usize],
    source: usize,
}

impl Objective<f64> for NegAf<'_, '_> {
    fn value(&self, x: &[f64]) -> f64 {
        -self.ctx.af_unit_grad(x, self.t, self.source).0
    }

    fn value_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (v, g) = self.ctx.af_unit_grad(x, self.t, self.source);
        (-v, g.into_iter().map(|d| -d).collect())
    }
}

/// Categorical assignments searched: all of them when few enough, else a
/// deterministic sample of `max` assignments.
pub(crate) fn categorical_candidates(spec: &CategoricalSpec, max: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if spec.is_empty() {
        return Ok(vec![Vec::new()]);
    }
    if spec.combinations() <= max {
        return Ok(spec.enumerate());
    }
    let mut sobol = Sobol::new(spec.len(), Some(seed))?;
    let levels: Vec<usize> = spec.levels().collect();
    Ok((0..max)
        .map(|_| {
            sobol.next_point::<f64>().iter().zip(&levels).map(|(u, l)| ((u * *l as f64) as usize).min(l - 1)).collect()
        })
        .collect())
}

/// Maximizes the cost-aware acquisition over every source and returns the
/// best point; ties go to the lowest source index.
pub fn propose(ctx: &AcqContext, config: &ProposeConfig) -> Result<Proposal> {
    if config.starts_per_source == 0 && config.extra_starts.is_empty() {
        return Err(invalid("no acquisition starts"));
    }
    let dx = ctx.bounds.dim();
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(config.starts_per_source + config.extra_starts.len());
    if config.starts_per_source > 0 {
        let mut sobol = Sobol::new(dx, Some(config.seed))?;
        starts.extend((0..config.starts_per_source).map(|_| sobol.next_point::<f64>()));
    }
    for s in &config.extra_starts {
        if s.len() != dx {
            return Err(invalid("extra start has the wrong dimension"));
        }
        starts.push(s.iter().map(|v| v.clamp(0.0, 1.0)).collect());
    }
    let cats = categorical_candidates(&ctx.categorical, config.max_enumerated, config.seed)?;
    let unit = BoxBounds::unit(dx);
    let lbfgs = LbfgsConfig::default().with_tol(config.tol).with_max_iter(config.max_iter);

    let per_source: Vec<Option<(Vec<f64>, Vec<usize>, f64)>> = (0..ctx.n_sources())
        .into_par_iter()
        .map(|j| {
            let mut best: Option<(Vec<f64>, Vec<usize>, f64)> = None;
            for t in &cats {
                let obj = NegAf { ctx, t, source: j };
                if let Ok(runs) = multistart(&obj, &starts, &unit, &lbfgs) {
                    let m = &runs[0];
                    let af = -m.f;
                    if af.is_finite() && best.as_ref().is_none_or(|b| af > b.2) {
                        best = Some((m.x.clone(), t.clone(), af));
                    }
                }
            }
            best
        })
        .collect();

    let mut chosen: Option<Proposal> = None;
    for (j, best) in per_source.into_iter().enumerate() {
        let Some((x, t, af)) = best else { continue };
        let value = composite_value(af, ctx.costs[j])?;
        if chosen.as_ref().is_none_or(|c| value > c.value) {
            let mut xo = ctx.bounds.from_unit(&x);
            ctx.bounds.project(&mut xo);
            chosen = Some(Proposal { point: MixedPoint::new(xo, t, j), value });
        }
    }
    chosen.ok_or_else(|| Error::ProposalFailure("every inner optimization failed".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{Prediction, PredictionGrad};

    /// Surrogate with closed-form mean and variance per source.
    struct Mock {
        mean: fn(&[f64], usize) -> f64,
        var: fn(&[f64], usize) -> f64,
    }

    impl Surrogate for Mock {
        fn input_dim(&self) -> usize {
            1
        }

        fn predict_unit(&self, x: &[f64], _t: &[usize], s: usize) -> Prediction {
            Prediction { mean: (self.mean)(x, s), variance: (self.var)(x, s) }
        }

        fn predict_unit_grad(&self, x: &[f64], t: &[usize], s: usize, _v: bool) -> PredictionGrad {
            let p = self.predict_unit(x, t, s);
            let h = 1e-6;
            let up = self.predict_unit(&[x[0] + h], t, s);
            let dn = self.predict_unit(&[x[0] - h], t, s);
            PredictionGrad {
                mean: p.mean,
                variance: p.variance,
                d_mean: vec![(up.mean - dn.mean) / (2.0 * h)],
                d_variance: vec![(up.variance - dn.variance) / (2.0 * h)],
            }
        }
    }

    fn constant(value: f64, var: f64) -> Mock {
        // fn pointers cannot capture; encode the two cases used below
        match (value, var) {
            (0.0, 1.0) => Mock { mean: |_, _| 0.0, var: |_, _| 1.0 },
            (2.0, 1.0) => Mock { mean: |_, _| 2.0, var: |_, _| 1.0 },
            _ => unreachable!(),
        }
    }

    fn ctx<'a>(obj: &'a Mock, cons: Vec<&'a dyn Surrogate>, costs: Vec<f64>) -> AcqContext<'a> {
        AcqContext::new(obj, cons, vec![0.0; costs.len()], costs, 0, BoxBounds::unit(1), CategoricalSpec::empty())
            .unwrap()
    }

    #[test]
    fn lf_value_examples() {
        assert!((lf_value(0.0f64, 1.0, 0.0) - 0.3989422804014327).abs() < 1e-12);
        assert!((lf_value(2.0f64, 1.0, 0.0) - 0.05399096651318806).abs() < 1e-12);
        assert_eq!(lf_value(0.0, 1e-13, 0.0), 0.0);
        assert_eq!(lf_value(0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn hf_value_examples() {
        assert_eq!(hf_value(1.0, 1.0), 0.0);
        assert_eq!(hf_value(1.0, 2.0), 1.0);
        assert_eq!(hf_value(3.0, 1.0), -2.0);
    }

    #[test]
    fn violation_branch_examples() {
        assert_eq!(constrained_value(0.39894, &[-0.1, -0.5]), 0.39894);
        assert_eq!(constrained_value(0.39894, &[0.5, -0.2]), -0.5);
        assert_eq!(constrained_value(0.39894, &[0.3, 0.2]), -0.5);
        assert_eq!(constrained_value::<f64>(0.7, &[]), 0.7);
    }

    #[test]
    fn composite_examples() {
        assert_eq!(composite_value(2.0, 10.0).unwrap(), 0.2);
        assert_eq!(composite_value(0.37, 1.0).unwrap(), 0.37);
        assert_eq!(composite_value(-0.5, 100.0).unwrap(), -0.005);
        assert!(composite_value(1.0, 0.0).is_err());
        assert!(composite_value(1.0, -3.0).is_err());
    }

    #[test]
    fn context_methods_route_branches() {
        let obj = constant(0.0, 1.0);
        let feasible = Mock { mean: |_, _| -0.1, var: |_, _| 0.0 };
        let violated = Mock { mean: |_, _| 0.5, var: |_, _| 0.0 };
        let u = MixedPoint::continuous(vec![0.3], 1);
        let c = ctx(&obj, vec![&feasible], vec![10.0, 1.0]);
        assert!((c.af_constrained(&u, 1).unwrap() - 0.3989422804014327).abs() < 1e-12);
        assert_eq!(c.af_constrained(&u, 0).unwrap(), 0.0);
        assert!(c.af_lf(&u, 0).is_err());
        let c = ctx(&obj, vec![&feasible, &violated], vec![10.0, 1.0]);
        assert_eq!(c.af_constrained(&u, 1).unwrap(), -0.5);
        assert_eq!(c.composite(&u, 0).unwrap(), -0.05);
    }

    #[test]
    fn unit_gradient_matches_values() {
        let obj = Mock { mean: |x, s| (3.0 * x[0]).sin() + s as f64 * 0.1, var: |x, _| 0.2 + x[0] * x[0] };
        let c = AcqContext::new(
            &obj,
            vec![],
            vec![0.1, -0.2],
            vec![5.0, 1.0],
            0,
            BoxBounds::unit(1),
            CategoricalSpec::empty(),
        )
        .unwrap();
        for j in 0..2 {
            for &x in &[0.1, 0.45, 0.8] {
                let (v, g) = c.af_unit_grad(&[x], &[], j);
                let fd = crate::numopt::fd_gradient(|u: &[f64]| c.af_unit_grad(u, &[], j).0, &[x], 1e-6);
                assert!((g[0] - fd[0]).abs() < 1e-6, "{} {}", g[0], fd[0]);
                let u = MixedPoint::continuous(vec![x], j);
                assert!((v - c.af_constrained(&u, j).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lf_value_increases_with_tau() {
        let mut prev = 0.0;
        for i in 1..100 {
            let v = lf_value(1.0, i as f64 * 0.05, 1.0);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn propose_prefers_larger_cost_adjusted_value() {
        // source 1 has ten times the exploration value of source 0
        let obj = Mock { mean: |_, _| 0.0, var: |_, s| if s == 1 { 100.0 } else { 1.0 } };
        let c = AcqContext::new(
            &obj,
            vec![],
            vec![0.0, 0.0, 0.0],
            vec![1.0, 1.0, 1.0],
            2,
            BoxBounds::unit(1),
            CategoricalSpec::empty(),
        )
        .unwrap();
        let p = propose(&c, &ProposeConfig::default()).unwrap();
        assert_eq!(p.source(), 1);
        assert!((p.value - 10.0 * 0.3989422804014327).abs() < 1e-9);
    }

    #[test]
    fn propose_constant_returns_value_in_box() {
        let obj = constant(2.0, 1.0);
        let c = AcqContext::new(
            &obj,
            vec![],
            vec![1.0],
            vec![4.0],
            0,
            BoxBounds::new(vec![-5.0], vec![10.0]).unwrap(),
            CategoricalSpec::empty(),
        )
        .unwrap();
        let p = propose(&c, &ProposeConfig::default()).unwrap();
        assert_eq!(p.value, -0.25);
        assert!(p.point.x[0] >= -5.0 && p.point.x[0] <= 10.0);
    }

    #[test]
    fn ties_go_to_lowest_source() {
        let obj = Mock { mean: |_, _| 0.0, var: |_, _| 1.0 };
        let c =
            AcqContext::new(&obj, vec![], vec![0.0; 3], vec![1.0; 3], 2, BoxBounds::unit(1), CategoricalSpec::empty())
                .unwrap();
        assert_eq!(propose(&c, &ProposeConfig::default()).unwrap().source(), 0);
    }

    #[test]
    fn categorical_enumeration_and_sampling() {
        let small = CategoricalSpec::new(vec![("a".into(), 2), ("b".into(), 3)]).unwrap();
        assert_eq!(categorical_candidates(&small, 64, 0).unwrap().len(), 6);
        let big = CategoricalSpec::new(vec![("a".into(), 10), ("b".into(), 10)]).unwrap();
        let c = categorical_candidates(&big, 64, 1).unwrap();
        assert_eq!(c.len(), 64);
        assert!(c.iter().all(|t| big.validate(t).is_ok()));
    }
}
