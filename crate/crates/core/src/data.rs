//! Design points and multi-source observation sets.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;

/// A design point: continuous block `x`, categorical levels `t` and the
/// index of the data source it belongs to (0-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedPoint<T = f64> {
    pub x: Vec<T>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub t: Vec<usize>,
    pub source: usize,
}

impl<T: Real> MixedPoint<T> {
    pub fn new(x: Vec<T>, t: Vec<usize>, source: usize) -> Self {
        Self { x, t, source }
    }

    /// Continuous-only point.
    pub fn continuous(x: Vec<T>, source: usize) -> Self {
        Self { x, t: Vec::new(), source }
    }

    /// Same location, different source label.
    pub fn with_source(&self, source: usize) -> Self {
        Self { x: self.x.clone(), t: self.t.clone(), source }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
    }
}

/// Observations concatenated across every data source.
///
/// Row `i` holds the point, its objective value and the `K` constraint values
/// observed together with it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MfDataset {
    pub points: Vec<MixedPoint>,
    pub y: Vec<f64>,
    pub g: Vec<Vec<f64>>,
    pub n_constraints: usize,
}

impl MfDataset {
    pub fn new(n_constraints: usize) -> Self {
        Self { n_constraints, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, point: MixedPoint, y: f64, g: Vec<f64>) -> Result<()> {
        if g.len() != self.n_constraints {
            return Err(invalid(format!("expected {} constraint values, got {}", self.n_constraints, g.len())));
        }
        self.points.push(point);
        self.y.push(y);
        self.g.push(g);
        Ok(())
    }

    /// Values of constraint `k` for every row.
    pub fn constraint_column(&self, k: usize) -> Vec<f64> {
        self.g.iter().map(|row| row[k]).collect()
    }

    /// Number of rows from each of `n_sources` sources.
    pub fn source_counts(&self, n_sources: usize) -> Vec<usize> {
        let mut counts = vec![0; n_sources];
        for p in &self.points {
            if p.source < n_sources {
                counts[p.source] += 1;
            }
        }
        counts
    }

    /// Whether row `i` satisfies every observed constraint.
    pub fn is_feasible(&self, i: usize) -> bool {
        self.g[i].iter().all(|&v| v <= 0.0)
    }

    /// Best objective among rows of `source` with feasible observed
    /// constraints, falling back to the best row of that source when none is
    /// feasible. `None` if the source has no rows.
    pub fn incumbent(&self, source: usize) -> Option<(usize, f64)> {
        let best = |feasible_only: bool| {
            (0..self.len())
                .filter(|&i| self.points[i].source == source)
                .filter(|&i| !feasible_only || self.is_feasible(i))
                .fold(None, |acc: Option<(usize, f64)>, i| match acc {
                    Some((_, v)) if v <= self.y[i] => acc,
                    _ => Some((i, self.y[i])),
                })
        };
        best(true).or_else(|| best(false))
    }
}
