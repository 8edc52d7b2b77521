//! The optimization loop and its ask-tell interface.
//!
//! Each iteration fits one emulator to the objective and one per
//! constraint, maximizes the cost-aware acquisition, queries the chosen
//! source, and re-optimizes the high-fidelity surrogate to test for
//! convergence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{propose, AcqContext, ProposeConfig};
use crate::benchmarks::{evaluate, initial_design, NoiseLevel, Problem};
use crate::data::{MfDataset, MixedPoint};
use crate::error::{invalid, Error, Result};
use crate::gp::{fit, GpModel, InputSpace, Surrogate, TrainConfig, TrainingData};
use crate::stopping::{
    final_optimum, normalize_history, run_pao, should_stop, PaoConfig, PaoProblem, PaoRecord, StopConfig,
};

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The optimum sequence stabilized.
    Criterion,
    IterationCap,
    CostCap,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Criterion => "criterion",
            Self::IterationCap => "iteration_cap",
            Self::CostCap => "cost_cap",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub train: TrainConfig,
    /// Training starts once a warm start exists; the warm start is one of
    /// them.
    pub refit_restarts: usize,
    pub propose: ProposeConfig,
    pub pao: PaoConfig,
    pub stop: StopConfig,
    pub max_iterations: usize,
    pub max_cost: f64,
    pub seed: u64,
    /// Reuse the previous hyperparameters as a training start.
    pub warm_start: bool,
    /// `observe` only accepts the pending suggestion.
    pub strict: bool,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            refit_restarts: 3,
            propose: ProposeConfig::default(),
            pao: PaoConfig::default(),
            stop: StopConfig::default(),
            max_iterations: 200,
            max_cost: 1e6,
            seed: 0,
            warm_start: true,
            strict: true,
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        StopConfig::new(self.stop.window, self.stop.threshold)?;
        if self.refit_restarts == 0 {
            return Err(invalid("refit restarts must be at least 1"));
        }
        if !(self.max_cost >= 0.0) {
            return Err(invalid("cost cap must be non-negative"));
        }
        Ok(())
    }
}

/// One accepted observation and the state right after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub q: usize,
    pub source: usize,
    pub u: MixedPoint,
    pub y: f64,
    pub g: Vec<f64>,
    pub cumulative_cost: f64,
    #[serde(rename = "y*_PAO")]
    pub y_pao: f64,
    pub pao_feasible: bool,
    pub pao_point: MixedPoint,
    /// Best high-fidelity observation so far, feasible when possible.
    pub hf_incumbent: Option<f64>,
    pub stopped_reason: Option<StopReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub final_optimum: f64,
    /// Point attaining `final_optimum`.
    pub final_point: Option<MixedPoint>,
    /// Constraint values backing the final point: surrogate means for a
    /// post-acquisition optimum, observations for a sampled point.
    pub final_constraints: Vec<f64>,
    pub final_feasible: bool,
    pub history: Vec<IterationRecord>,
    pub counts: Vec<usize>,
    pub total_cost: f64,
    pub stop_reason: StopReason,
    pub iterations: usize,
}

/// Source of observations for [`BoState::step`].
pub trait Oracle {
    fn query(&mut self, point: &MixedPoint) -> Result<(f64, Vec<f64>)>;
}

/// Queries a built-in or registered problem with its own noise stream.
pub struct ProblemOracle<'a> {
    pub problem: &'a Problem,
    pub noise: NoiseLevel,
    rng: ChaCha8Rng,
}

impl<'a> ProblemOracle<'a> {
    pub fn new(problem: &'a Problem, noise: NoiseLevel, seed: u64) -> Self {
        Self { problem, noise, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Oracle for ProblemOracle<'_> {
    fn query(&mut self, point: &MixedPoint) -> Result<(f64, Vec<f64>)> {
        evaluate(self.problem, point.source, &point.x, &point.t, self.noise, &mut self.rng)
    }
}

#[derive(Debug, Clone)]
struct Models {
    objective: GpModel,
    constraints: Vec<GpModel>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Running state of one optimization.
#[derive(Debug, Clone)]
pub struct BoState {
    space: InputSpace,
    costs: Vec<f64>,
    hf: usize,
    config: BoConfig,
    pub dataset: MfDataset,
    /// Accepted observations after the initial design.
    pub q: usize,
    pub counts: Vec<usize>,
    pub cumulative_cost: f64,
    pub pao: Vec<PaoRecord>,
    pub normalized: Vec<f64>,
    pub records: Vec<IterationRecord>,
    pub stop_reason: Option<StopReason>,
    warm: Vec<Option<Vec<f64>>>,
    models: Option<Models>,
    pending: Option<MixedPoint>,
}

impl BoState {
    pub fn new(space: InputSpace, costs: Vec<f64>, hf: usize, initial: MfDataset, config: BoConfig) -> Result<Self> {
        config.validate()?;
        if costs.len() != space.n_sources {
            return Err(invalid("one cost per source is required"));
        }
        if costs.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
            return Err(invalid("costs must be positive"));
        }
        if hf >= space.n_sources {
            return Err(invalid("high-fidelity index out of range"));
        }
        for (p, (y, g)) in initial.points.iter().zip(initial.y.iter().zip(&initial.g)) {
            space.validate(p)?;
            if !y.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(invalid("initial observations must be finite"));
            }
        }
        let counts = initial.source_counts(space.n_sources);
        let k = initial.n_constraints;
        let mut state = Self {
            space,
            costs,
            hf,
            config,
            dataset: initial,
            q: 0,
            counts,
            cumulative_cost: 0.0,
            pao: Vec::new(),
            normalized: Vec::new(),
            records: Vec::new(),
            stop_reason: None,
            warm: vec![None; k + 1],
            models: None,
            pending: None,
        };
        state.cumulative_cost = state.cost_of_counts();
        Ok(state)
    }

    /// State for a problem, seeded with its initial design.
    pub fn for_problem(problem: &Problem, noise: NoiseLevel, config: BoConfig) -> Result<Self> {
        let data = initial_design(problem, noise, config.seed)?;
        let space = InputSpace::new(problem.bounds.clone(), problem.categorical.clone(), problem.n_sources())?;
        Self::new(space, problem.costs(), problem.hf, data, config)
    }

    pub fn config(&self) -> &BoConfig {
        &self.config
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn is_stopped(&self) -> bool {
        self.stop_reason.is_some()
    }

    pub fn pending(&self) -> Option<&MixedPoint> {
        self.pending.as_ref()
    }

    /// Leaves strict mode: `observe` then accepts any point.
    pub fn set_free_form(&mut self, free: bool) {
        self.config.strict = !free;
    }

    fn cost_of_counts(&self) -> f64 {
        self.counts.iter().zip(&self.costs).map(|(n, c)| *n as f64 * c).sum()
    }

    /// Best high-fidelity observation, feasible when one exists.
    pub fn hf_incumbent(&self) -> Option<(usize, f64)> {
        self.dataset.incumbent(self.hf)
    }

    /// Marks the run stopped if a safety cap is reached.
    pub fn check_caps(&mut self) -> bool {
        if self.stop_reason.is_none() {
            if self.q >= self.config.max_iterations {
                self.stop_reason = Some(StopReason::IterationCap);
            } else if self.cumulative_cost >= self.config.max_cost {
                self.stop_reason = Some(StopReason::CostCap);
            }
        }
        self.stop_reason.is_some()
    }

    fn ensure_models(&mut self) -> Result<()> {
        if self.models.is_some() {
            return Ok(());
        }
        let k = self.dataset.n_constraints;
        let mut data = vec![TrainingData::objective(&self.dataset)?];
        for c in 0..k {
            data.push(TrainingData::constraint(&self.dataset, c)?);
        }
        let configs: Vec<TrainConfig> = (0..=k)
            .map(|m| {
                let mut c = self.config.train.clone();
                c.seed = mix(self.config.seed, self.q as u64, m as u64 + 1);
                if self.config.warm_start {
                    if let Some(w) = &self.warm[m] {
                        c.warm_start = Some(w.clone());
                        c.restarts = self.config.refit_restarts;
                    }
                }
                c
            })
            .collect();
        let space = &self.space;
        let fitted: Vec<Result<GpModel>> =
            data.par_iter().zip(configs.par_iter()).map(|(d, c)| fit(space, d, c)).collect();
        let mut fitted = fitted.into_iter().collect::<Result<Vec<GpModel>>>()?;
        for (w, m) in self.warm.iter_mut().zip(&fitted) {
            *w = Some(m.parameters().to_vec());
        }
        let constraints = fitted.split_off(1);
        self.models = Some(Models { objective: fitted.pop().expect("objective model"), constraints });
        Ok(())
    }

    fn unit_of(&self, p: &MixedPoint) -> Vec<f64> {
        self.space.bounds.to_unit(&p.x)
    }

    /// Fits the emulators and returns the next point and source without
    /// querying anything.
    pub fn suggest(&mut self) -> Result<MixedPoint> {
        if self.is_stopped() {
            return Err(Error::Protocol("the run has stopped".into()));
        }
        if self.config.strict && self.pending.is_some() {
            return Err(Error::Protocol("a suggestion is already pending".into()));
        }
        self.ensure_models()?;
        let models = self.models.as_ref().expect("fitted models");
        let incumbents: Vec<f64> = (0..self.space.n_sources)
            .map(|j| {
                self.dataset.incumbent(j).map(|(_, v)| v).ok_or_else(|| invalid(format!("source {j} has no data")))
            })
            .collect::<Result<_>>()?;
        let ctx = AcqContext::new(
            &models.objective,
            models.constraints.iter().map(|m| m as &dyn Surrogate).collect(),
            incumbents,
            self.costs.clone(),
            self.hf,
            self.space.bounds.clone(),
            self.space.categorical.clone(),
        )?;
        let mut pc = self.config.propose.clone();
        pc.seed = mix(self.config.seed, self.q as u64, 0x5EED);
        if let Some((i, _)) = self.hf_incumbent() {
            pc.extra_starts.push(self.unit_of(&self.dataset.points[i]));
        }
        if let Some(r) = self.pao.last() {
            pc.extra_starts.push(self.unit_of(&r.point));
        }
        let proposal = propose(&ctx, &pc)?;
        self.pending = Some(proposal.point.clone());
        Ok(proposal.point)
    }

    /// Appends an observation, re-optimizes the high-fidelity surrogate and
    /// updates the stopping test.
    pub fn observe(&mut self, point: MixedPoint, y: f64, g: Vec<f64>) -> Result<&IterationRecord> {
        if self.is_stopped() {
            return Err(Error::Protocol("the run has stopped".into()));
        }
        if self.config.strict && self.pending.as_ref() != Some(&point) {
            return Err(Error::Protocol("observation does not match the pending suggestion".into()));
        }
        self.space.validate(&point)?;
        if !self.space.bounds.contains(&point.x) {
            return Err(invalid("observed point lies outside the bounds"));
        }
        if !y.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(invalid("observations must be finite"));
        }
        if g.len() != self.dataset.n_constraints {
            return Err(invalid("wrong number of constraint values"));
        }
        self.ensure_models()?;

        let mut dataset = self.dataset.clone();
        dataset.push(point.clone(), y, g.clone())?;
        let models = self.models.as_ref().expect("fitted models");
        let problem = PaoProblem {
            objective: &models.objective,
            constraints: models.constraints.iter().map(|m| m as &dyn Surrogate).collect(),
            bounds: self.space.bounds.clone(),
            categorical: self.space.categorical.clone(),
            hf: self.hf,
        };
        let feasible_hf: Vec<MixedPoint> = (0..dataset.len())
            .filter(|&i| dataset.points[i].source == self.hf && dataset.is_feasible(i))
            .map(|i| dataset.points[i].clone())
            .collect();
        let mut pao_config = self.config.pao.clone();
        pao_config.seed = mix(self.config.seed, self.q as u64, 0xFA0);
        let record = run_pao(&problem, self.q + 1, &feasible_hf, self.pao.last(), &pao_config)?;

        self.dataset = dataset;
        self.counts[point.source] += 1;
        self.cumulative_cost = self.cost_of_counts();
        self.pao.push(record);
        let history: Vec<f64> = self.pao.iter().map(|r| r.value).collect();
        self.normalized = normalize_history(&history);
        if should_stop(&self.normalized, &self.config.stop) {
            self.stop_reason = Some(StopReason::Criterion);
        }
        self.q += 1;
        self.models = None;
        self.pending = None;
        self.check_caps();

        let last = self.pao.last().expect("record just pushed");
        self.records.push(IterationRecord {
            q: self.q,
            source: point.source,
            u: point,
            y,
            g,
            cumulative_cost: self.cumulative_cost,
            y_pao: last.value,
            pao_feasible: last.feasible,
            pao_point: last.point.clone(),
            hf_incumbent: self.hf_incumbent().map(|(_, v)| v),
            stopped_reason: self.stop_reason,
        });
        Ok(self.records.last().expect("record just pushed"))
    }

    /// One full iteration against an oracle.
    pub fn step(&mut self, oracle: &mut dyn Oracle) -> Result<&IterationRecord> {
        let point = self.suggest()?;
        let (y, g) = match oracle.query(&point) {
            Ok(v) => v,
            Err(e) => {
                self.pending = None;
                return Err(e);
            }
        };
        self.observe(point, y, g)
    }

    /// Smaller of the high-fidelity incumbent and the recent feasible
    /// post-acquisition optima, with the point attaining it.
    ///
    /// Only feasible observations count here, unlike the incumbent used by
    /// the acquisition.
    pub fn final_optimum(&self) -> (f64, Option<MixedPoint>, Vec<f64>, bool) {
        let window = self.config.stop.window;
        let inc = (0..self.dataset.len())
            .filter(|&i| self.dataset.points[i].source == self.hf && self.dataset.is_feasible(i))
            .fold(None, |acc: Option<(usize, f64)>, i| match acc {
                Some((_, v)) if v <= self.dataset.y[i] => acc,
                _ => Some((i, self.dataset.y[i])),
            });
        let inc_value = inc.map_or(f64::INFINITY, |(_, v)| v);
        let value = final_optimum(inc_value, &self.pao, window);
        let start = self.pao.len().saturating_sub(window);
        let from_pao = self.pao[start..].iter().find(|r| r.feasible && r.value == value && value < inc_value);
        match (from_pao, inc) {
            (Some(r), _) => (value, Some(r.point.clone()), r.constraint_means.clone(), true),
            (None, Some((i, _))) => (value, Some(self.dataset.points[i].clone()), self.dataset.g[i].clone(), true),
            (None, None) => (value, None, Vec::new(), false),
        }
    }

    pub fn result(&self) -> RunResult {
        let (final_optimum, final_point, final_constraints, final_feasible) = self.final_optimum();
        RunResult {
            final_optimum,
            final_point,
            final_constraints,
            final_feasible,
            history: self.records.clone(),
            counts: self.counts.clone(),
            total_cost: self.cumulative_cost,
            stop_reason: self.stop_reason.unwrap_or(StopReason::IterationCap),
            iterations: self.q,
        }
    }
}

/// Runs the loop on a problem until the stopping rule or a cap fires.
pub fn run(problem: &Problem, noise: NoiseLevel, config: &BoConfig) -> Result<RunResult> {
    let mut state = BoState::for_problem(problem, noise, config.clone())?;
    let mut oracle = ProblemOracle::new(problem, noise, mix(config.seed, u64::MAX, 0x0BE5));
    while !state.check_caps() {
        state.step(&mut oracle)?;
    }
    Ok(state.result())
}
