//! Mixed-input Gaussian correlation with learned latent embeddings for the
//! categorical block and for the source label.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::data::MixedPoint;
use crate::error::{invalid, Error, Result};
use crate::scalar::{lit, Real};

/// Smallest nugget ever placed on the diagonal.
pub const NUGGET_FLOOR: f64 = 1e-8;
/// Largest floor tried before a factorization is declared failed.
pub const NUGGET_FLOOR_MAX: f64 = 1e-2;
/// Default dimension of both latent manifolds.
pub const DEFAULT_LATENT_DIM: usize = 2;

/// Ordered categorical variables and their level counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalSpec {
    variables: Vec<(String, usize)>,
}

impl CategoricalSpec {
    pub fn new(variables: Vec<(String, usize)>) -> Result<Self> {
        if let Some((name, levels)) = variables.iter().find(|(_, l)| *l < 2) {
            return Err(invalid(format!("categorical variable {name} has {levels} levels, need >= 2")));
        }
        Ok(Self { variables })
    }

    /// No categorical variables.
    pub fn empty() -> Self {
        Self::default()
    }

    /// The source label seen as a categorical variable with `n_sources`
    /// levels.
    pub fn fidelity(n_sources: usize) -> Result<Self> {
        Self::new(vec![("s".to_string(), n_sources)])
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn levels(&self) -> impl Iterator<Item = usize> + '_ {
        self.variables.iter().map(|(_, l)| *l)
    }

    pub fn variables(&self) -> &[(String, usize)] {
        &self.variables
    }

    /// Length of the grouped one-hot prior.
    pub fn prior_dim(&self) -> usize {
        self.levels().sum()
    }

    /// Number of joint level combinations.
    pub fn combinations(&self) -> usize {
        self.levels().product()
    }

    /// Position of each variable's one-hot block inside the prior.
    pub fn offsets(&self) -> Vec<usize> {
        self.levels()
            .scan(0, |acc, l| {
                let o = *acc;
                *acc += l;
                Some(o)
            })
            .collect()
    }

    pub fn validate(&self, t: &[usize]) -> Result<()> {
        if t.len() != self.len() {
            return Err(invalid(format!("expected {} categorical values, got {}", self.len(), t.len())));
        }
        for (i, (&level, levels)) in t.iter().zip(self.levels()).enumerate() {
            if level >= levels {
                return Err(invalid(format!("level {level} out of range for variable {i} ({levels} levels)")));
            }
        }
        Ok(())
    }

    /// Every joint assignment in lexicographic order.
    pub fn enumerate(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        for levels in self.levels() {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (0..levels).map(move |l| {
                        let mut p = prefix.clone();
                        p.push(l);
                        p
                    })
                })
                .collect();
        }
        out
    }
}

/// Grouped one-hot encoding of a categorical assignment.
pub fn encode_priors<T: Real>(t: &[usize], spec: &CategoricalSpec) -> Result<Vec<T>> {
    spec.validate(t)?;
    let mut pi = vec![T::zero(); spec.prior_dim()];
    for (&level, offset) in t.iter().zip(spec.offsets()) {
        pi[offset + level] = T::one();
    }
    Ok(pi)
}

/// Bias-free linear embedding, stored as a `latent_dim x prior_dim` matrix in
/// row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding<T = f64> {
    latent_dim: usize,
    prior_dim: usize,
    weights: Vec<T>,
}

impl<T: Real> Embedding<T> {
    pub fn new(latent_dim: usize, prior_dim: usize, weights: Vec<T>) -> Result<Self> {
        if weights.len() != latent_dim * prior_dim {
            return Err(invalid(format!("embedding needs {} weights, got {}", latent_dim * prior_dim, weights.len())));
        }
        Ok(Self { latent_dim, prior_dim, weights })
    }

    pub fn zeros(latent_dim: usize, prior_dim: usize) -> Self {
        Self { latent_dim, prior_dim, weights: vec![T::zero(); latent_dim * prior_dim] }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn prior_dim(&self) -> usize {
        self.prior_dim
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.weights[row * self.prior_dim + col]
    }

    /// Column `col`, i.e. the latent position of a prior that is one-hot at
    /// `col`.
    pub fn column(&self, col: usize) -> Vec<T> {
        (0..self.latent_dim).map(|r| self.get(r, col)).collect()
    }
}

/// Latent vector `W pi`.
pub fn embed<T: Real>(pi: &[T], w: &Embedding<T>) -> Result<Vec<T>> {
    if pi.len() != w.prior_dim {
        return Err(invalid(format!("prior has length {}, embedding expects {}", pi.len(), w.prior_dim)));
    }
    Ok((0..w.latent_dim)
        .map(|r| {
            w.weights[r * w.prior_dim..(r + 1) * w.prior_dim]
                .iter()
                .zip(pi)
                .fold(T::zero(), |acc, (a, b)| acc + *a * *b)
        })
        .collect())
}

/// Kernel hyperparameters: log10 inverse length scales, the two embeddings and
/// the process variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams<T = f64> {
    pub omega: Vec<T>,
    pub theta_h: Embedding<T>,
    pub theta_z: Embedding<T>,
    pub sigma2: T,
}

impl<T: Real> KernelParams<T> {
    pub fn new(omega: Vec<T>, theta_h: Embedding<T>, theta_z: Embedding<T>, sigma2: T) -> Result<Self> {
        if !(sigma2 > T::zero()) || !sigma2.is_finite() {
            return Err(invalid("process variance must be positive and finite"));
        }
        if omega.iter().any(|w| !w.is_finite()) {
            return Err(invalid("length-scale exponents must be finite"));
        }
        if theta_h.latent_dim == 0 || theta_z.latent_dim == 0 {
            return Err(invalid("latent dimensions must be at least one"));
        }
        Ok(Self { omega, theta_h, theta_z, sigma2 })
    }

    /// Continuous-only kernel: zero embeddings of the given prior sizes.
    pub fn isotropic(omega: Vec<T>, sigma2: T, prior_t: usize, prior_s: usize) -> Result<Self> {
        Self::new(
            omega,
            Embedding::zeros(DEFAULT_LATENT_DIM, prior_t),
            Embedding::zeros(DEFAULT_LATENT_DIM, prior_s),
            sigma2,
        )
    }
}

/// Per-source nugget values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuggetVector<T = f64> {
    delta: Vec<T>,
}

impl<T: Real> NuggetVector<T> {
    /// Values below [`NUGGET_FLOOR`] are raised to it.
    pub fn new(delta: Vec<T>) -> Result<Self> {
        if delta.is_empty() || delta.iter().any(|d| !d.is_finite() || *d < T::zero()) {
            return Err(invalid("nuggets must be finite, non-negative and at least one"));
        }
        let floor = lit::<T>(NUGGET_FLOOR);
        Ok(Self { delta: delta.into_iter().map(|d| d.max(floor)).collect() })
    }

    pub fn values(&self) -> &[T] {
        &self.delta
    }

    pub fn get(&self, source: usize) -> T {
        self.delta[source]
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }
}

/// Latent coordinates of the categorical block and of the source label.
pub fn latents<T: Real>(
    point: &MixedPoint<T>,
    spec: &CategoricalSpec,
    params: &KernelParams<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    let h = if spec.is_empty() {
        vec![T::zero(); params.theta_h.latent_dim]
    } else {
        embed(&encode_priors(&point.t, spec)?, &params.theta_h)?
    };
    let n_sources = params.theta_z.prior_dim;
    if point.source >= n_sources {
        return Err(invalid(format!("source {} out of range ({} sources)", point.source, n_sources)));
    }
    let z = params.theta_z.column(point.source);
    Ok((h, z))
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + (*x - *y) * (*x - *y))
}

/// Correlation between two mixed points:
/// `exp(-sum 10^omega_i (x_i - x'_i)^2 - |h - h'|^2 - |z - z'|^2)`.
pub fn correlation<T: Real>(
    u: &MixedPoint<T>,
    u2: &MixedPoint<T>,
    spec: &CategoricalSpec,
    params: &KernelParams<T>,
) -> Result<T> {
    if u.x.len() != params.omega.len() || u2.x.len() != params.omega.len() {
        return Err(invalid("continuous dimension does not match the length-scale vector"));
    }
    if !u.is_finite() || !u2.is_finite() {
        return Err(invalid("non-finite continuous input"));
    }
    let (h1, z1) = latents(u, spec, params)?;
    let (h2, z2) = latents(u2, spec, params)?;
    let ten = lit::<T>(10.0);
    let cont =
        u.x.iter()
            .zip(&u2.x)
            .zip(&params.omega)
            .fold(T::zero(), |acc, ((a, b), w)| acc + ten.powf(*w) * (*a - *b) * (*a - *b));
    Ok((-(cont + sq_dist(&h1, &h2) + sq_dist(&z1, &z2))).exp())
}

/// Factorized covariance `sigma^2 R + N_delta`.
#[derive(Debug, Clone)]
pub struct Covariance {
    pub matrix: DMatrix<f64>,
    pub cholesky: Cholesky<f64, Dyn>,
    /// Nugget actually placed on each row after jitter escalation.
    pub diagonal_nugget: Vec<f64>,
    /// Floor in force after escalation.
    pub floor: f64,
}

/// Adds per-row nuggets to `kernel` and factorizes, escalating the nugget
/// floor tenfold from [`NUGGET_FLOOR`] to [`NUGGET_FLOOR_MAX`] on failure.
pub fn factorize_with_nugget(kernel: &DMatrix<f64>, nugget: &[f64]) -> Result<Covariance> {
    let n = kernel.nrows();
    let mut floor = NUGGET_FLOOR;
    loop {
        let diag: Vec<f64> = nugget.iter().map(|d| d.max(floor)).collect();
        let mut c = kernel.clone();
        for i in 0..n {
            c[(i, i)] += diag[i];
        }
        if let Some(chol) = Cholesky::new(c.clone()) {
            return Ok(Covariance { matrix: c, cholesky: chol, diagonal_nugget: diag, floor });
        }
        floor *= 10.0;
        if floor > NUGGET_FLOOR_MAX * (1.0 + 1e-9) {
            return Err(Error::NumericalFailure(
                "covariance matrix not positive definite after nugget escalation".into(),
            ));
        }
    }
}

/// Covariance matrix of `points` with source-dependent nuggets, checked by a
/// Cholesky factorization.
pub fn covariance_matrix(
    points: &[MixedPoint],
    spec: &CategoricalSpec,
    params: &KernelParams,
    nugget: &NuggetVector,
) -> Result<Covariance> {
    if points.is_empty() {
        return Err(invalid("covariance of an empty point set"));
    }
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = params.sigma2 * correlation(&points[i], &points[i], spec, params)?;
        for j in 0..i {
            let c = params.sigma2 * correlation(&points[i], &points[j], spec, params)?;
            k[(i, j)] = c;
            k[(j, i)] = c;
        }
    }
    let diag = points
        .iter()
        .map(|p| {
            if p.source < nugget.len() {
                Ok(nugget.get(p.source))
            } else {
                Err(invalid(format!("no nugget for source {}", p.source)))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    factorize_with_nugget(&k, &diag)
}
