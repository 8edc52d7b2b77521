use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Axis-aligned box `lower <= x <= upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds<T = f64> {
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Real> BoxBounds<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(invalid("bound vectors differ in length"));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(invalid(format!("bound {i} is not finite")));
            }
            if l > u {
                return Err(invalid(format!("lower bound exceeds upper bound in dimension {i}")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        Self { lower: vec![T::zero(); dim], upper: vec![T::one(); dim] }
    }

    /// Same interval in every dimension.
    pub fn uniform(dim: usize, lower: T, upper: T) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| v >= l && v <= u)
    }

    pub fn project(&self, x: &mut [T]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.max(*l).min(*u);
        }
    }

    /// Maps a point of the unit cube onto the box.
    pub fn from_unit(&self, u: &[T]) -> Vec<T> {
        u.iter().zip(self.lower.iter().zip(&self.upper)).map(|(v, (l, h))| *l + *v * (*h - *l)).collect()
    }

    /// Maps a point of the box onto the unit cube. Degenerate dimensions map
    /// to zero.
    pub fn to_unit(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, h))| {
                let w = *h - *l;
                if w > T::zero() {
                    (*v - *l) / w
                } else {
                    T::zero()
                }
            })
            .collect()
    }

    pub fn center(&self) -> Vec<T> {
        let half = T::one() / (T::one() + T::one());
        self.from_unit(&vec![half; self.dim()])
    }
}
