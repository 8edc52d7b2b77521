//! Multi-fidelity Gaussian-process emulator.
//!
//! All sources share one GP whose kernel sees the source label through a
//! learned latent embedding. Inputs are scaled to the unit cube and targets
//! standardized before training; predictions are returned in original units.

mod fit;
mod io;
mod layout;
mod loss;
mod mean;

use nalgebra::{Cholesky, DVector, Dyn};
use serde::{Deserialize, Serialize};

pub use fit::{fit, TrainConfig, TrainingObjective};
pub use io::ModelFile;
pub use loss::{
    interval_multiplier, interval_score, interval_score_term, neg_log_marginal_likelihood, training_loss, LossParts,
};
pub use mean::{mean_value, MeanKind, MeanSpec};

use crate::data::{MfDataset, MixedPoint};
use crate::error::{invalid, Result};
use crate::kernel::{CategoricalSpec, Embedding, KernelParams, NuggetVector};
use crate::numopt::BoxBounds;
use layout::ParamLayout;
use loss::{factorize, LossProblem};

/// Layout of the input space shared by every model of a problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpace {
    pub bounds: BoxBounds,
    #[serde(default)]
    pub categorical: CategoricalSpec,
    pub n_sources: usize,
}

impl InputSpace {
    pub fn new(bounds: BoxBounds, categorical: CategoricalSpec, n_sources: usize) -> Result<Self> {
        if n_sources == 0 {
            return Err(invalid("at least one source is required"));
        }
        Ok(Self { bounds, categorical, n_sources })
    }

    pub fn dx(&self) -> usize {
        self.bounds.dim()
    }

    pub fn validate(&self, p: &MixedPoint) -> Result<()> {
        if p.x.len() != self.dx() {
            return Err(invalid(format!("point has {} continuous inputs, expected {}", p.x.len(), self.dx())));
        }
        if !p.is_finite() {
            return Err(invalid("non-finite continuous input"));
        }
        if p.source >= self.n_sources {
            return Err(invalid(format!("source {} out of range ({} sources)", p.source, self.n_sources)));
        }
        self.categorical.validate(&p.t)
    }
}

/// Points with one target each (the objective or a single constraint).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingData {
    pub points: Vec<MixedPoint>,
    pub targets: Vec<f64>,
}

impl TrainingData {
    pub fn new(points: Vec<MixedPoint>, targets: Vec<f64>) -> Result<Self> {
        if points.len() != targets.len() {
            return Err(invalid("points and targets differ in length"));
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite target"));
        }
        Ok(Self { points, targets })
    }

    pub fn objective(ds: &MfDataset) -> Result<Self> {
        Self::new(ds.points.clone(), ds.y.clone())
    }

    pub fn constraint(ds: &MfDataset, k: usize) -> Result<Self> {
        if k >= ds.n_constraints {
            return Err(invalid(format!("constraint {k} does not exist")));
        }
        Self::new(ds.points.clone(), ds.constraint_column(k))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Training inputs in unit coordinates with standardized targets.
#[derive(Debug, Clone)]
pub(crate) struct Encoded {
    pub n: usize,
    pub dx: usize,
    x: Vec<f64>,
    /// Position of each categorical level inside the one-hot prior.
    pub active: Vec<Vec<usize>>,
    pub source: Vec<usize>,
    pub y: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Encoded {
    pub fn new(space: &InputSpace, data: &TrainingData) -> Result<Self> {
        let n = data.len();
        let dx = space.dx();
        let offsets = space.categorical.offsets();
        let mut x = Vec::with_capacity(n * dx);
        let mut active = Vec::with_capacity(n);
        let mut source = Vec::with_capacity(n);
        for p in &data.points {
            space.validate(p)?;
            x.extend(space.bounds.to_unit(&p.x));
            active.push(p.t.iter().zip(&offsets).map(|(l, o)| l + o).collect());
            source.push(p.source);
        }
        let y_mean = data.targets.iter().sum::<f64>() / n.max(1) as f64;
        let var = data.targets.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n.max(1) as f64;
        let y_std = if var.sqrt() > 1e-12 * y_mean.abs().max(1.0) { var.sqrt() } else { 1.0 };
        let y = data.targets.iter().map(|v| (v - y_mean) / y_std).collect();
        Ok(Self { n, dx, x, active, source, y, y_mean, y_std })
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dx..(i + 1) * self.dx]
    }

    pub fn latent_h(&self, theta_h: &Embedding) -> Vec<Vec<f64>> {
        self.active
            .iter()
            .map(|act| (0..theta_h.latent_dim()).map(|c| act.iter().map(|&m| theta_h.get(c, m)).sum()).collect())
            .collect()
    }
}

/// Posterior mean and variance in original units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn std_dev(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

/// Prediction with gradients with respect to unit-cube coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrad {
    pub mean: f64,
    pub variance: f64,
    pub d_mean: Vec<f64>,
    pub d_variance: Vec<f64>,
}

/// Anything that predicts per-source means and variances on the unit cube.
///
/// The acquisition and post-acquisition optimizers only see models through
/// this trait.
pub trait Surrogate: Sync {
    fn input_dim(&self) -> usize;

    fn predict_unit(&self, x: &[f64], t: &[usize], source: usize) -> Prediction;

    /// Prediction with gradients; `with_variance = false` may skip the
    /// variance and leave `d_variance` empty.
    fn predict_unit_grad(&self, x: &[f64], t: &[usize], source: usize, with_variance: bool) -> PredictionGrad;

    /// Typical magnitude of the output, used to make penalties scale-free.
    fn output_scale(&self) -> f64 {
        1.0
    }
}

/// A trained emulator.
#[derive(Debug, Clone)]
pub struct GpModel {
    space: InputSpace,
    layout: ParamLayout,
    mean_kind: MeanKind,
    params: Vec<f64>,
    kernel: KernelParams,
    nugget: NuggetVector,
    data: TrainingData,
    enc: Encoded,
    pow_omega: Vec<f64>,
    h: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    cholesky: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    beta: Vec<f64>,
    loss: LossParts,
    eps: f64,
    nu: f64,
}

impl GpModel {
    /// Builds a model from explicit hyperparameters; the mean coefficients
    /// are solved by generalized least squares. `params` uses the flat
    /// layout of [`GpModel::parameters`].
    pub fn from_parameters(
        space: InputSpace,
        data: TrainingData,
        mean_kind: MeanKind,
        latent_dim: usize,
        params: Vec<f64>,
        eps: f64,
        nu: f64,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(invalid("cannot build a model without data"));
        }
        let layout = ParamLayout {
            dx: space.dx(),
            latent_dim,
            prior_t: space.categorical.prior_dim(),
            n_sources: space.n_sources,
        };
        if params.len() != layout.len() {
            return Err(invalid(format!("expected {} hyperparameters, got {}", layout.len(), params.len())));
        }
        let enc = Encoded::new(&space, &data)?;
        let problem = LossProblem { enc: &enc, layout: &layout, mean: mean_kind, eps, nu };
        let loss = problem.parts(&params)?;
        let f = factorize(&enc, &layout, mean_kind, &params, false)?;
        let (kernel, nugget) = layout.unpack(&params)?;
        Ok(Self {
            pow_omega: f.pow_omega,
            h: f.h,
            z: f.z,
            cholesky: f.cov.cholesky,
            alpha: f.alpha,
            beta: f.beta.iter().copied().collect(),
            space,
            layout,
            mean_kind,
            params,
            kernel,
            nugget,
            data,
            enc,
            loss,
            eps,
            nu,
        })
    }

    /// Convenience constructor from typed hyperparameters.
    pub fn with_hyperparameters(
        space: InputSpace,
        data: TrainingData,
        mean_kind: MeanKind,
        kernel: &KernelParams,
        nugget: &NuggetVector,
    ) -> Result<Self> {
        let latent_dim = kernel.theta_z.latent_dim();
        let layout = ParamLayout {
            dx: space.dx(),
            latent_dim,
            prior_t: space.categorical.prior_dim(),
            n_sources: space.n_sources,
        };
        if nugget.len() != space.n_sources {
            return Err(invalid("nugget vector length differs from the number of sources"));
        }
        let params = layout.pack(kernel, nugget);
        Self::from_parameters(space, data, mean_kind, latent_dim, params, 0.0, 0.05)
    }

    pub fn space(&self) -> &InputSpace {
        &self.space
    }

    /// Flat hyperparameter vector (log10 scales for variance and nuggets).
    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn kernel_params(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn nugget(&self) -> &NuggetVector {
        &self.nugget
    }

    pub fn latent_dim(&self) -> usize {
        self.layout.latent_dim
    }

    pub fn training_data(&self) -> &TrainingData {
        &self.data
    }

    /// Training loss parts at the stored hyperparameters, in standardized
    /// units.
    pub fn loss(&self) -> LossParts {
        self.loss
    }

    pub fn loss_settings(&self) -> (f64, f64) {
        (self.eps, self.nu)
    }

    /// Mean function in original units.
    pub fn mean_spec(&self) -> MeanSpec {
        MeanSpec {
            kind: self.mean_kind,
            beta: self.beta.iter().map(|b| self.enc.y_mean + self.enc.y_std * b).collect(),
        }
    }

    pub fn mean_kind(&self) -> MeanKind {
        self.mean_kind
    }

    /// Target standardization `(mean, std)`.
    pub fn standardization(&self) -> (f64, f64) {
        (self.enc.y_mean, self.enc.y_std)
    }

    /// Source-specific prediction at `point` (original coordinates).
    pub fn predict(&self, point: &MixedPoint) -> Result<Prediction> {
        self.space.validate(point)?;
        let u = self.space.bounds.to_unit(&point.x);
        Ok(self.predict_unit(&u, &point.t, point.source))
    }

    /// Posterior variance before clamping at zero, in original units.
    pub fn unclamped_variance(&self, point: &MixedPoint) -> Result<f64> {
        self.space.validate(point)?;
        let u = self.space.bounds.to_unit(&point.x);
        let (_, var) = self.raw_predict(&u, &point.t, point.source, true);
        Ok(var * self.enc.y_std * self.enc.y_std)
    }

    fn cross_covariance(&self, x: &[f64], t: &[usize], source: usize) -> (DVector<f64>, Vec<f64>) {
        let h = self.query_latent(t);
        let z = &self.z[source];
        let k = DVector::from_iterator(
            self.enc.n,
            (0..self.enc.n).map(|a| {
                let xa = self.enc.x_row(a);
                let mut s = 0.0;
                for i in 0..x.len() {
                    let d = x[i] - xa[i];
                    s += self.pow_omega[i] * d * d;
                }
                s += sq(&h, &self.h[a]);
                s += sq(z, &self.z[self.enc.source[a]]);
                self.kernel.sigma2 * (-s).exp()
            }),
        );
        (k, h)
    }

    fn query_latent(&self, t: &[usize]) -> Vec<f64> {
        let offsets = self.space.categorical.offsets();
        (0..self.layout.latent_dim)
            .map(|c| t.iter().zip(&offsets).map(|(l, o)| self.kernel.theta_h.get(c, l + o)).sum())
            .collect()
    }

    /// Standardized mean and unclamped variance.
    fn raw_predict(&self, x: &[f64], t: &[usize], source: usize, with_variance: bool) -> (f64, f64) {
        let (k, _) = self.cross_covariance(x, t, source);
        let mean = self.beta[self.mean_kind.basis_index(source)] + k.dot(&self.alpha);
        let var = if with_variance {
            let v = self.cholesky.l_dirty().solve_lower_triangular(&k).unwrap_or_else(|| k.clone());
            self.kernel.sigma2 - v.norm_squared()
        } else {
            0.0
        };
        (mean, var)
    }
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Surrogate for GpModel {
    fn input_dim(&self) -> usize {
        self.space.dx()
    }

    fn predict_unit(&self, x: &[f64], t: &[usize], source: usize) -> Prediction {
        let (m, v) = self.raw_predict(x, t, source, true);
        let s = self.enc.y_std;
        Prediction { mean: self.enc.y_mean + s * m, variance: (v * s * s).max(0.0) }
    }

    fn predict_unit_grad(&self, x: &[f64], t: &[usize], source: usize, with_variance: bool) -> PredictionGrad {
        let (k, _) = self.cross_covariance(x, t, source);
        let dx = x.len();
        let s = self.enc.y_std;
        let mean = self.beta[self.mean_kind.basis_index(source)] + k.dot(&self.alpha);
        let mut d_mean = vec![0.0; dx];
        let (variance, cinv_k) = if with_variance {
            let cinv_k = self.cholesky.solve(&k);
            (self.kernel.sigma2 - k.dot(&cinv_k), Some(cinv_k))
        } else {
            (0.0, None)
        };
        let mut d_var = if with_variance { vec![0.0; dx] } else { Vec::new() };
        for a in 0..self.enc.n {
            let xa = self.enc.x_row(a);
            for i in 0..dx {
                // dk_a/dx_i
                let dk = -2.0 * self.pow_omega[i] * (x[i] - xa[i]) * k[a];
                d_mean[i] += self.alpha[a] * dk;
                if let Some(c) = &cinv_k {
                    d_var[i] -= 2.0 * c[a] * dk;
                }
            }
        }
        let clamped = variance < 0.0;
        PredictionGrad {
            mean: self.enc.y_mean + s * mean,
            variance: (variance * s * s).max(0.0),
            d_mean: d_mean.into_iter().map(|v| v * s).collect(),
            d_variance: d_var.into_iter().map(|v| if clamped { 0.0 } else { v * s * s }).collect(),
        }
    }

    fn output_scale(&self) -> f64 {
        self.enc.y_std
    }
}
