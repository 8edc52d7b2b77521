//! Scalar abstraction shared by the numeric building blocks.
//!
//! Kernels, acquisition formulas, stopping statistics and the inner optimizer
//! are written against [`Real`] so they work for `f32` as well as `f64`. The
//! Gaussian-process solver itself is `f64` only: Cholesky factorizations with
//! nuggets near `1e-8` are not meaningful in single precision.

use std::fmt::Debug;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point type usable by the generic parts of the crate.
pub trait Real: Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static {}

impl<T> Real for T where T: Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("literal representable in target float type")
}

/// Converts a count into `T`.
#[inline]
pub fn count<T: Real>(n: usize) -> T {
    T::from_usize(n).expect("count representable in target float type")
}
