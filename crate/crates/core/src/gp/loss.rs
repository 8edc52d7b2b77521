//! Likelihood, interval score and the combined training loss.

use std::f64::consts::LN_10;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use super::layout::{dpow10, ParamLayout};
use super::mean::MeanKind;
use super::Encoded;
use crate::error::{invalid, Error, Result};
use crate::kernel::{factorize_with_nugget, Covariance};
use crate::numopt::Objective;
use crate::scalar::{count, lit, Real};

/// Half-width multiplier of the central `(1 - nu)` normal interval; the
/// conventional 1.96 at 95%.
pub fn interval_multiplier(nu: f64) -> f64 {
    if (nu - 0.05).abs() < 1e-15 {
        1.96
    } else {
        Normal::standard().inverse_cdf(1.0 - nu / 2.0)
    }
}

/// Score of one prediction interval `mu +/- z tau` against observation `y`.
#[inline]
pub fn interval_score_term<T: Real>(mu: T, tau: T, y: T, nu: T, z: T) -> T {
    let two = lit::<T>(2.0);
    let upper = mu + z * tau;
    let lower = mu - z * tau;
    let mut s = upper - lower;
    if y < lower {
        s = s + two / nu * (lower - y);
    }
    if y > upper {
        s = s + two / nu * (y - upper);
    }
    s
}

/// Negatively oriented interval score averaged over the points.
pub fn interval_score<T: Real>(mu: &[T], tau: &[T], y: &[T], nu: T) -> Result<T> {
    if mu.len() != tau.len() || mu.len() != y.len() {
        return Err(invalid("interval score inputs differ in length"));
    }
    if mu.is_empty() {
        return Err(invalid("interval score of an empty set"));
    }
    if !(nu > T::zero() && nu < T::one()) {
        return Err(invalid("interval level must lie in (0, 1)"));
    }
    let z = lit::<T>(interval_multiplier(nu.to_f64().unwrap()));
    let total =
        mu.iter().zip(tau).zip(y).fold(T::zero(), |acc, ((&m, &t), &v)| acc + interval_score_term(m, t, v, nu, z));
    Ok(total / count(mu.len()))
}

/// `L + eps |L| IS`.
pub fn training_loss<T: Real>(l_mle: T, is: T, eps: T) -> T {
    l_mle + eps * l_mle.abs() * is
}

/// `0.5 log|C| + 0.5 (y - m)^T C^-1 (y - m)`, without the `2 pi` constant.
pub fn neg_log_marginal_likelihood(cov: &DMatrix<f64>, y: &[f64], mean: &[f64]) -> Result<f64> {
    let n = cov.nrows();
    if cov.ncols() != n || y.len() != n || mean.len() != n || n == 0 {
        return Err(invalid("likelihood inputs have inconsistent sizes"));
    }
    let chol = nalgebra::Cholesky::new(cov.clone())
        .ok_or_else(|| Error::NumericalFailure("covariance is not positive definite".into()))?;
    let r = DVector::from_iterator(n, y.iter().zip(mean).map(|(a, b)| a - b));
    let alpha = chol.solve(&r);
    let logdet: f64 = chol.l_dirty().diagonal().iter().take(n).map(|d| 2.0 * d.ln()).sum();
    Ok(0.5 * logdet + 0.5 * r.dot(&alpha))
}

/// Everything derived from one hyperparameter vector.
pub(crate) struct Factorized {
    pub kernel: DMatrix<f64>,
    pub cov: Covariance,
    pub beta: DVector<f64>,
    pub alpha: DVector<f64>,
    pub nll: f64,
    /// Present when the interval score or a gradient was requested.
    pub inverse: Option<DMatrix<f64>>,
    pub cinv_basis: DMatrix<f64>,
    pub gls_inverse: DMatrix<f64>,
    pub pow_omega: Vec<f64>,
    pub h: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
}

impl Factorized {
    /// Leave-in residuals `y - mu` and predictive variances at the training
    /// inputs, excluding the nugget at the query.
    pub fn leave_in(&self) -> (Vec<f64>, Vec<f64>) {
        let inv = self.inverse.as_ref().expect("inverse computed");
        let d = &self.cov.diagonal_nugget;
        let e = (0..d.len()).map(|i| d[i] * self.alpha[i]).collect();
        let var = (0..d.len()).map(|i| (d[i] - d[i] * d[i] * inv[(i, i)]).max(0.0)).collect();
        (e, var)
    }
}

pub(crate) struct LossProblem<'a> {
    pub enc: &'a Encoded,
    pub layout: &'a ParamLayout,
    pub mean: MeanKind,
    pub eps: f64,
    pub nu: f64,
}

pub(crate) fn basis_matrix(enc: &Encoded, mean: MeanKind, n_sources: usize) -> DMatrix<f64> {
    let nb = mean.n_coefficients(n_sources);
    let mut f = DMatrix::zeros(enc.n, nb);
    for i in 0..enc.n {
        f[(i, mean.basis_index(enc.source[i]))] = 1.0;
    }
    f
}

pub(crate) fn factorize(
    enc: &Encoded,
    layout: &ParamLayout,
    mean: MeanKind,
    p: &[f64],
    want_inverse: bool,
) -> Result<Factorized> {
    let (kp, nugget) = layout.unpack(p)?;
    let n = enc.n;
    let dx = enc.dx;
    let pow_omega: Vec<f64> = kp.omega.iter().map(|w| 10f64.powf(*w)).collect();
    let h = enc.latent_h(&kp.theta_h);
    let z: Vec<Vec<f64>> = (0..layout.n_sources).map(|m| kp.theta_z.column(m)).collect();
    let sigma2 = kp.sigma2;

    let mut k = DMatrix::zeros(n, n);
    for a in 0..n {
        k[(a, a)] = sigma2;
        let xa = enc.x_row(a);
        for b in 0..a {
            let xb = enc.x_row(b);
            let mut s = 0.0;
            for i in 0..dx {
                let d = xa[i] - xb[i];
                s += pow_omega[i] * d * d;
            }
            s += sq(&h[a], &h[b]);
            s += sq(&z[enc.source[a]], &z[enc.source[b]]);
            let v = sigma2 * (-s).exp();
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    let diag: Vec<f64> = enc.source.iter().map(|&s| nugget.get(s)).collect();
    let cov = factorize_with_nugget(&k, &diag)?;

    let basis = basis_matrix(enc, mean, layout.n_sources);
    let cinv_basis = cov.cholesky.solve(&basis);
    let gls = basis.transpose() * &cinv_basis;
    let gls_inverse =
        gls.try_inverse().ok_or_else(|| Error::NumericalFailure("mean coefficients not identifiable".into()))?;
    let y = DVector::from_column_slice(&enc.y);
    let beta = &gls_inverse * (cinv_basis.transpose() * &y);
    let r = &y - &basis * &beta;
    let alpha = cov.cholesky.solve(&r);
    let logdet: f64 = cov.cholesky.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let nll = 0.5 * logdet + 0.5 * r.dot(&alpha);
    if !nll.is_finite() {
        return Err(Error::NumericalFailure("non-finite likelihood".into()));
    }
    let inverse = want_inverse.then(|| cov.cholesky.inverse());
    Ok(Factorized { kernel: k, cov, beta, alpha, nll, inverse, cinv_basis, gls_inverse, pow_omega, h, z })
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Loss value and its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub nll: f64,
    pub interval_score: f64,
    pub total: f64,
}

impl LossProblem<'_> {
    fn needs_score(&self) -> bool {
        self.eps > 0.0
    }

    pub fn parts(&self, p: &[f64]) -> Result<LossParts> {
        let f = factorize(self.enc, self.layout, self.mean, p, self.needs_score())?;
        let is = if self.needs_score() { self.score(&f).0 } else { 0.0 };
        Ok(LossParts { nll: f.nll, interval_score: is, total: training_loss(f.nll, is, self.eps) })
    }

    /// Interval score at the training points, with its partial derivatives
    /// with respect to the residual `e_i = y_i - mu_i` and to `tau_i^2`.
    fn score(&self, f: &Factorized) -> (f64, Vec<f64>, Vec<f64>) {
        let n = self.enc.n;
        let (e, var) = f.leave_in();
        let z = interval_multiplier(self.nu);
        let inv_n = 1.0 / n as f64;
        let mut total = 0.0;
        let mut de = vec![0.0; n];
        let mut dvar = vec![0.0; n];
        for i in 0..n {
            let tau = var[i].sqrt();
            // residual e = y - mu, so y = mu + e
            total += interval_score_term(0.0, tau, e[i], self.nu, z);
            let outside = if e[i] < -z * tau {
                de[i] = -2.0 / self.nu * inv_n;
                true
            } else if e[i] > z * tau {
                de[i] = 2.0 / self.nu * inv_n;
                true
            } else {
                false
            };
            let dtau = inv_n * 2.0 * z * (1.0 - if outside { 1.0 / self.nu } else { 0.0 });
            if tau > 0.0 {
                dvar[i] = dtau / (2.0 * tau);
            }
        }
        (total * inv_n, de, dvar)
    }

    pub fn value_and_gradient(&self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
        let enc = self.enc;
        let layout = self.layout;
        let n = enc.n;
        let f = factorize(enc, layout, self.mean, p, true)?;
        let inv = f.inverse.as_ref().expect("inverse computed");
        let delta = &f.cov.diagonal_nugget;
        let alpha = &f.alpha;

        let (is, de, dvar) = if self.needs_score() { self.score(&f) } else { (0.0, vec![0.0; n], vec![0.0; n]) };
        let total = training_loss(f.nll, is, self.eps);
        let c_l = 1.0 + self.eps * f.nll.signum() * is;
        let c_is = self.eps * f.nll.abs();

        // Every term is linear in dC/dp, so collect the weights in one
        // symmetric matrix G with dLoss/dp = sum_ab G_ab dC_ab/dp (+ direct
        // nugget terms).
        let mut g = inv * (0.5 * c_l);
        g.ger(-0.5 * c_l, alpha, alpha, 1.0);
        if self.needs_score() && c_is != 0.0 {
            let v = DVector::from_iterator(n, (0..n).map(|i| de[i] * delta[i]));
            let cinv_v = inv * &v;
            let proj_v = &cinv_v - &f.cinv_basis * (&f.gls_inverse * (f.cinv_basis.transpose() * &v));
            g.ger(-0.5 * c_is, &proj_v, alpha, 1.0);
            g.ger(-0.5 * c_is, alpha, &proj_v, 1.0);
            let mut scaled = inv.clone();
            for (j, mut col) in scaled.column_iter_mut().enumerate() {
                col *= dvar[j] * delta[j] * delta[j];
            }
            g.gemm(c_is, &scaled, inv, 1.0);
        }

        let mut grad = vec![0.0; layout.len()];
        let dx = enc.dx;
        let zo = layout.z_offset();
        let ho = layout.h_offset();
        let ld = layout.latent_dim;
        let mut sigma_acc = 0.0;
        for a in 0..n {
            sigma_acc += g[(a, a)] * f.kernel[(a, a)];
            let xa = enc.x_row(a);
            for b in 0..a {
                let w = 2.0 * g[(a, b)] * f.kernel[(a, b)];
                if w == 0.0 {
                    continue;
                }
                sigma_acc += w;
                let xb = enc.x_row(b);
                for i in 0..dx {
                    let d = xa[i] - xb[i];
                    grad[i] -= w * dpow10(f.pow_omega[i]) * d * d;
                }
                let (sa, sb) = (enc.source[a], enc.source[b]);
                if layout.has_z() && sa != sb {
                    for c in 0..ld {
                        let diff = f.z[sa][c] - f.z[sb][c];
                        grad[zo + c * layout.n_sources + sa] -= 2.0 * w * diff;
                        grad[zo + c * layout.n_sources + sb] += 2.0 * w * diff;
                    }
                }
                if layout.has_h() {
                    for (pa, pb) in enc.active[a].iter().zip(&enc.active[b]) {
                        if pa == pb {
                            continue;
                        }
                        for c in 0..ld {
                            let diff = f.h[a][c] - f.h[b][c];
                            grad[ho + c * layout.prior_t + pa] -= 2.0 * w * diff;
                            grad[ho + c * layout.prior_t + pb] += 2.0 * w * diff;
                        }
                    }
                }
            }
        }
        grad[layout.sigma_index()] = LN_10 * sigma_acc;

        let (_, nugget) = layout.unpack(p)?;
        let no = layout.nugget_offset();
        for i in 0..n {
            let s = enc.source[i];
            // nugget pinned at the escalated floor does not move with its parameter
            if nugget.get(s) < f.cov.floor {
                continue;
            }
            let d = delta[i];
            let mut term = g[(i, i)];
            if self.needs_score() {
                term += c_is * (de[i] * alpha[i] + dvar[i] * (1.0 - 2.0 * d * inv[(i, i)]));
            }
            grad[no + s] += LN_10 * d * term;
        }
        Ok((total, grad))
    }
}

impl Objective<f64> for LossProblem<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.parts(x).map(|p| p.total).unwrap_or(f64::INFINITY)
    }

    fn value_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        self.value_and_gradient(x).unwrap_or_else(|_| (f64::INFINITY, vec![0.0; x.len()]))
    }
}
