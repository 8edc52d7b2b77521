use serde::{Deserialize, Serialize};

use super::layout::ParamLayout;
use super::loss::{LossParts, LossProblem};
use super::{Encoded, GpModel, InputSpace, MeanKind, TrainingData};
use crate::error::{invalid, Error, Result};
use crate::kernel::DEFAULT_LATENT_DIM;
use crate::numopt::{multistart, LbfgsConfig, Sobol};

/// Hyperparameter training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Number of optimizer starts, including the default or warm start.
    pub restarts: usize,
    /// Weight of the interval-score term.
    pub is_weight: f64,
    /// Interval level; 0.05 gives 95% intervals.
    pub nu: f64,
    /// L-BFGS iteration budget per start.
    pub max_iter: usize,
    pub latent_dim: usize,
    /// `None` picks a per-source constant for several sources and a
    /// single constant otherwise.
    pub mean: Option<MeanKind>,
    pub seed: u64,
    /// Parameters to use as the first start instead of the default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            is_weight: 0.08,
            nu: 0.05,
            max_iter: 200,
            latent_dim: DEFAULT_LATENT_DIM,
            mean: None,
            seed: 0,
            warm_start: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(invalid("restarts must be at least 1"));
        }
        if !(self.is_weight >= 0.0 && self.is_weight.is_finite()) {
            return Err(invalid("interval-score weight must be non-negative"));
        }
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return Err(invalid("interval level must lie in (0, 1)"));
        }
        if self.latent_dim == 0 {
            return Err(invalid("latent dimension must be at least 1"));
        }
        Ok(())
    }

    pub fn mean_kind(&self, n_sources: usize) -> MeanKind {
        self.mean.unwrap_or(if n_sources > 1 { MeanKind::PerSourceConstant } else { MeanKind::SingleConstant })
    }
}

/// Fits hyperparameters by multi-start L-BFGS on the training loss.
pub fn fit(space: &InputSpace, data: &TrainingData, config: &TrainConfig) -> Result<GpModel> {
    config.validate()?;
    if data.len() < 2 {
        return Err(invalid("at least two training points are required"));
    }
    let mut seen = vec![false; space.n_sources];
    for p in &data.points {
        space.validate(p)?;
        seen[p.source] = true;
    }
    if let Some(s) = seen.iter().position(|v| !v) {
        return Err(invalid(format!("source {s} has no training data")));
    }
    let mean = config.mean_kind(space.n_sources);
    let layout = ParamLayout {
        dx: space.dx(),
        latent_dim: config.latent_dim,
        prior_t: space.categorical.prior_dim(),
        n_sources: space.n_sources,
    };
    let enc = Encoded::new(space, data)?;
    let problem = LossProblem { enc: &enc, layout: &layout, mean, eps: config.is_weight, nu: config.nu };
    let bounds = layout.bounds();

    let mut first = match &config.warm_start {
        Some(w) if w.len() == layout.len() && w.iter().all(|v| v.is_finite()) => w.clone(),
        _ => layout.default_start(),
    };
    bounds.project(&mut first);
    let mut starts = vec![first];
    if config.restarts > 1 {
        let start_box = layout.start_bounds();
        let mut sobol = Sobol::new(layout.len(), Some(config.seed))?;
        for _ in 1..config.restarts {
            starts.push(start_box.from_unit(&sobol.next_point::<f64>()));
        }
    }
    let lbfgs = LbfgsConfig::default().with_tol(1e-5).with_max_iter(config.max_iter).with_f_tol(1e-10);
    let runs = multistart(&problem, &starts, &bounds, &lbfgs)
        .map_err(|e| Error::TrainingFailure(format!("every restart failed: {e}")))?;
    let best = runs
        .into_iter()
        .find(|m| m.f.is_finite())
        .ok_or_else(|| Error::TrainingFailure("no restart produced a finite loss".into()))?;
    GpModel::from_parameters(space.clone(), data.clone(), mean, config.latent_dim, best.x, config.is_weight, config.nu)
        .map_err(|e| Error::TrainingFailure(e.to_string()))
}

/// The training loss as a function of the flat hyperparameter vector.
///
/// Exposed for gradient checks and for callers that drive their own
/// optimizer.
#[derive(Debug, Clone)]
pub struct TrainingObjective {
    enc: Encoded,
    layout: ParamLayout,
    mean: MeanKind,
    eps: f64,
    nu: f64,
}

impl TrainingObjective {
    pub fn new(space: &InputSpace, data: &TrainingData, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(invalid("no training data"));
        }
        let layout = ParamLayout {
            dx: space.dx(),
            latent_dim: config.latent_dim,
            prior_t: space.categorical.prior_dim(),
            n_sources: space.n_sources,
        };
        Ok(Self {
            enc: Encoded::new(space, data)?,
            layout,
            mean: config.mean_kind(space.n_sources),
            eps: config.is_weight,
            nu: config.nu,
        })
    }

    fn problem(&self) -> LossProblem<'_> {
        LossProblem { enc: &self.enc, layout: &self.layout, mean: self.mean, eps: self.eps, nu: self.nu }
    }

    pub fn n_parameters(&self) -> usize {
        self.layout.len()
    }

    /// Hard bounds of the hyperparameters.
    pub fn bounds(&self) -> crate::numopt::BoxBounds {
        self.layout.bounds()
    }

    /// Box the random restarts are drawn from.
    pub fn start_bounds(&self) -> crate::numopt::BoxBounds {
        self.layout.start_bounds()
    }

    pub fn default_start(&self) -> Vec<f64> {
        self.layout.default_start()
    }

    pub fn parts(&self, p: &[f64]) -> Result<LossParts> {
        self.check(p)?;
        self.problem().parts(p)
    }

    pub fn value(&self, p: &[f64]) -> Result<f64> {
        Ok(self.parts(p)?.total)
    }

    /// Loss and its analytic gradient.
    pub fn value_and_gradient(&self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(p)?;
        self.problem().value_and_gradient(p)
    }

    fn check(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.layout.len() {
            return Err(invalid(format!("expected {} parameters, got {}", self.layout.len(), p.len())));
        }
        Ok(())
    }
}
