use std::f64::consts::LN_10;

use crate::error::Result;
use crate::kernel::{Embedding, KernelParams, NuggetVector};
use crate::numopt::BoxBounds;

pub(crate) const OMEGA_BOUNDS: (f64, f64) = (-10.0, 6.0);
pub(crate) const OMEGA_START: (f64, f64) = (-2.0, 2.0);
pub(crate) const LATENT_BOUNDS: (f64, f64) = (-3.0, 3.0);
pub(crate) const LATENT_START: (f64, f64) = (-1.0, 1.0);
pub(crate) const LOG_SIGMA2_BOUNDS: (f64, f64) = (-2.0, 2.0);
pub(crate) const LOG_NUGGET_BOUNDS: (f64, f64) = (-8.0, 0.0);
pub(crate) const LOG_NUGGET_START: (f64, f64) = (-6.0, -1.0);

/// Packing of the trainable hyperparameters into one flat vector:
/// `[omega | theta_h | theta_z | log10 sigma^2 | log10 delta]`.
///
/// The embeddings only appear when they can matter: `theta_h` when there are
/// categorical variables, `theta_z` with more than one source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ParamLayout {
    pub dx: usize,
    pub latent_dim: usize,
    pub prior_t: usize,
    pub n_sources: usize,
}

impl ParamLayout {
    pub fn has_h(&self) -> bool {
        self.prior_t > 0
    }

    pub fn has_z(&self) -> bool {
        self.n_sources > 1
    }

    pub fn h_offset(&self) -> usize {
        self.dx
    }

    pub fn n_h(&self) -> usize {
        if self.has_h() {
            self.latent_dim * self.prior_t
        } else {
            0
        }
    }

    pub fn z_offset(&self) -> usize {
        self.h_offset() + self.n_h()
    }

    pub fn n_z(&self) -> usize {
        if self.has_z() {
            self.latent_dim * self.n_sources
        } else {
            0
        }
    }

    pub fn sigma_index(&self) -> usize {
        self.z_offset() + self.n_z()
    }

    pub fn nugget_offset(&self) -> usize {
        self.sigma_index() + 1
    }

    pub fn len(&self) -> usize {
        self.nugget_offset() + self.n_sources
    }

    fn boxed(&self, omega: (f64, f64), latent: (f64, f64), nugget: (f64, f64)) -> BoxBounds {
        let mut lo = Vec::with_capacity(self.len());
        let mut hi = Vec::with_capacity(self.len());
        let mut push = |n: usize, (l, h): (f64, f64)| {
            lo.extend(std::iter::repeat_n(l, n));
            hi.extend(std::iter::repeat_n(h, n));
        };
        push(self.dx, omega);
        push(self.n_h() + self.n_z(), latent);
        push(1, LOG_SIGMA2_BOUNDS);
        push(self.n_sources, nugget);
        BoxBounds::new(lo, hi).expect("static parameter bounds are valid")
    }

    pub fn bounds(&self) -> BoxBounds {
        self.boxed(OMEGA_BOUNDS, LATENT_BOUNDS, LOG_NUGGET_BOUNDS)
    }

    /// Region the random restarts are drawn from.
    pub fn start_bounds(&self) -> BoxBounds {
        self.boxed(OMEGA_START, LATENT_START, LOG_NUGGET_START)
    }

    /// Deterministic first start: moderate length scales, sources spread
    /// along one latent axis, small nuggets.
    pub fn default_start(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.len()];
        p[..self.dx].iter_mut().for_each(|w| *w = 0.5);
        if self.has_h() {
            for m in 0..self.prior_t {
                p[self.h_offset() + m] = 0.1 * m as f64;
            }
        }
        if self.has_z() {
            for m in 0..self.n_sources {
                p[self.z_offset() + m] = 0.3 * m as f64;
            }
        }
        p[self.sigma_index()] = 0.0;
        for j in 0..self.n_sources {
            p[self.nugget_offset() + j] = -4.0;
        }
        p
    }

    pub fn unpack(&self, p: &[f64]) -> Result<(KernelParams, NuggetVector)> {
        let omega = p[..self.dx].to_vec();
        let theta_h = if self.has_h() {
            Embedding::new(self.latent_dim, self.prior_t, p[self.h_offset()..self.z_offset()].to_vec())?
        } else {
            Embedding::zeros(self.latent_dim, 0)
        };
        let theta_z = if self.has_z() {
            Embedding::new(self.latent_dim, self.n_sources, p[self.z_offset()..self.sigma_index()].to_vec())?
        } else {
            Embedding::zeros(self.latent_dim, self.n_sources)
        };
        let sigma2 = 10f64.powf(p[self.sigma_index()]);
        let kernel = KernelParams::new(omega, theta_h, theta_z, sigma2)?;
        let nugget = NuggetVector::new(p[self.nugget_offset()..].iter().map(|v| 10f64.powf(*v)).collect())?;
        Ok((kernel, nugget))
    }

    pub fn pack(&self, kernel: &KernelParams, nugget: &NuggetVector) -> Vec<f64> {
        let mut p = kernel.omega.clone();
        if self.has_h() {
            p.extend_from_slice(kernel.theta_h.weights());
        }
        if self.has_z() {
            p.extend_from_slice(kernel.theta_z.weights());
        }
        p.push(kernel.sigma2.log10());
        p.extend(nugget.values().iter().map(|d| d.log10()));
        p
    }
}

/// d(10^v)/dv = ln(10) 10^v.
pub(crate) fn dpow10(value: f64) -> f64 {
    LN_10 * value
}
