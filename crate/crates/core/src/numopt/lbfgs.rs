use std::collections::VecDeque;

use super::BoxBounds;
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// A differentiable objective. `value` is used for line-search trials and
/// `value_gradient` at accepted points, so implementations may make the
/// former cheaper.
pub trait Objective<T: Real> {
    fn value(&self, x: &[T]) -> T;

    fn value_gradient(&self, x: &[T]) -> (T, Vec<T>);
}

/// Adapter turning a pair of closures into an [`Objective`].
pub struct FnObjective<F, G> {
    pub f: F,
    pub grad: G,
}

impl<T, F, G> Objective<T> for FnObjective<F, G>
where
    T: Real,
    F: Fn(&[T]) -> T,
    G: Fn(&[T]) -> Vec<T>,
{
    fn value(&self, x: &[T]) -> T {
        (self.f)(x)
    }

    fn value_gradient(&self, x: &[T]) -> (T, Vec<T>) {
        ((self.f)(x), (self.grad)(x))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LbfgsConfig<T> {
    /// Number of correction pairs kept.
    pub memory: usize,
    /// Stop when the infinity norm of the projected gradient drops below this.
    pub tol: T,
    pub max_iter: usize,
    /// Relative decrease below which the run counts as converged; zero
    /// disables the test.
    pub f_tol: T,
    pub armijo_c1: T,
    pub max_backtracks: usize,
}

impl<T: Real> Default for LbfgsConfig<T> {
    fn default() -> Self {
        Self { memory: 10, tol: lit(1e-6), max_iter: 200, f_tol: T::zero(), armijo_c1: lit(1e-4), max_backtracks: 40 }
    }
}

impl<T: Real> LbfgsConfig<T> {
    pub fn with_tol(mut self, tol: T) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_f_tol(mut self, f_tol: T) -> Self {
        self.f_tol = f_tol;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum<T> {
    pub x: Vec<T>,
    pub f: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Closure form: minimizes `f` with gradient `grad` from `x0` inside `bounds`.
pub fn lbfgs_minimize<T, F, G>(
    f: F,
    grad: G,
    x0: &[T],
    bounds: &BoxBounds<T>,
    config: &LbfgsConfig<T>,
) -> Result<Minimum<T>>
where
    T: Real,
    F: Fn(&[T]) -> T,
    G: Fn(&[T]) -> Vec<T>,
{
    minimize(&FnObjective { f, grad }, x0, bounds, config)
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

fn all_finite<T: Real>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Components of the gradient that can still move `x` inside the box; the
/// others are pinned at an active bound.
fn projected_gradient<T: Real>(x: &[T], g: &[T], bounds: &BoxBounds<T>) -> Vec<T> {
    x.iter()
        .zip(g)
        .zip(bounds.lower().iter().zip(bounds.upper()))
        .map(
            |((&xi, &gi), (&l, &u))| {
                if (xi <= l && gi > T::zero()) || (xi >= u && gi < T::zero()) {
                    T::zero()
                } else {
                    gi
                }
            },
        )
        .collect()
}

struct Memory<T> {
    pairs: VecDeque<(Vec<T>, Vec<T>, T)>,
    capacity: usize,
}

impl<T: Real> Memory<T> {
    fn new(capacity: usize) -> Self {
        Self { pairs: VecDeque::with_capacity(capacity), capacity }
    }

    fn push(&mut self, s: Vec<T>, y: Vec<T>) {
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if !(sy > lit::<T>(1e-12) * yy) || !sy.is_finite() {
            return;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, T::one() / sy));
    }

    /// Two-loop recursion: returns `-H g`.
    fn direction(&self, g: &[T]) -> Vec<T> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = *rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi = *qi - a * *yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v = *v * gamma);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = *rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi = *qi + (a - b) * *si;
            }
        }
        q.iter().map(|v| -*v).collect()
    }
}

/// Projected L-BFGS with Armijo backtracking along the projection arc.
///
/// Every accepted step strictly decreases the objective, so the returned value
/// never exceeds `f(x0)`.
pub fn minimize<T, O>(objective: &O, x0: &[T], bounds: &BoxBounds<T>, config: &LbfgsConfig<T>) -> Result<Minimum<T>>
where
    T: Real,
    O: Objective<T> + ?Sized,
{
    if x0.len() != bounds.dim() {
        return Err(Error::InvalidInput(format!("start has dimension {}, bounds have {}", x0.len(), bounds.dim())));
    }
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let (mut f, mut g) = objective.value_gradient(&x);
    if !f.is_finite() || !all_finite(&g) {
        return Err(Error::NumericalFailure("objective not finite at start point".into()));
    }

    let half = lit::<T>(0.5);
    let mut memory = Memory::new(config.memory.max(1));
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        let pg = projected_gradient(&x, &g, bounds);
        let pg_norm = pg.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if pg_norm < config.tol {
            converged = true;
            break;
        }
        iterations += 1;

        let steepest = || {
            let norm = dot(&pg, &pg).sqrt();
            pg.iter().map(|v| -*v / norm).collect::<Vec<T>>()
        };
        let mut direction = if memory.pairs.is_empty() {
            steepest()
        } else {
            let mut d = memory.direction(&g);
            for (di, pgi) in d.iter_mut().zip(&pg) {
                if *pgi == T::zero() {
                    *di = T::zero();
                }
            }
            if dot(&d, &g) < T::zero() && all_finite(&d) {
                d
            } else {
                memory.pairs.clear();
                steepest()
            }
        };

        let mut accepted = None;
        'search: for attempt in 0..2 {
            let mut step = T::one();
            for k in 0..config.max_backtracks {
                let mut trial: Vec<T> = x.iter().zip(&direction).map(|(xi, di)| *xi + step * *di).collect();
                bounds.project(&mut trial);
                let delta: Vec<T> = trial.iter().zip(&x).map(|(a, b)| *a - *b).collect();
                let slope = dot(&g, &delta);
                if !(slope < T::zero()) {
                    break;
                }
                let (ft, gt) = if k == 0 {
                    let (ft, gt) = objective.value_gradient(&trial);
                    (ft, Some(gt))
                } else {
                    (objective.value(&trial), None)
                };
                if ft.is_finite() && ft <= f + config.armijo_c1 * slope && ft < f {
                    let gt = gt.unwrap_or_else(|| objective.value_gradient(&trial).1);
                    if all_finite(&gt) {
                        accepted = Some((trial, ft, gt));
                        break 'search;
                    }
                }
                step = step * half;
            }
            if attempt == 0 && !memory.pairs.is_empty() {
                memory.pairs.clear();
                direction = steepest();
            } else {
                break;
            }
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            break;
        };
        let s: Vec<T> = x_new.iter().zip(&x).map(|(a, b)| *a - *b).collect();
        let y: Vec<T> = g_new.iter().zip(&g).map(|(a, b)| *a - *b).collect();
        memory.push(s, y);
        let decrease = f - f_new;
        x = x_new;
        g = g_new;
        let scale = f.abs().max(f_new.abs()).max(T::one());
        f = f_new;
        if config.f_tol > T::zero() && decrease <= config.f_tol * scale {
            converged = true;
            break;
        }
    }

    Ok(Minimum { x, f, iterations, converged })
}
