use serde::{Deserialize, Serialize};

use crate::data::MixedPoint;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanKind {
    /// One constant shared by every source.
    SingleConstant,
    /// One constant per source.
    PerSourceConstant,
}

impl MeanKind {
    pub fn n_coefficients(self, n_sources: usize) -> usize {
        match self {
            MeanKind::SingleConstant => 1,
            MeanKind::PerSourceConstant => n_sources,
        }
    }

    /// Index of the coefficient used for `source`.
    pub fn basis_index(self, source: usize) -> usize {
        match self {
            MeanKind::SingleConstant => 0,
            MeanKind::PerSourceConstant => source,
        }
    }
}

/// Mean function with its coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSpec {
    pub kind: MeanKind,
    pub beta: Vec<f64>,
}

impl MeanSpec {
    pub fn new(kind: MeanKind, beta: Vec<f64>) -> Result<Self> {
        if kind == MeanKind::SingleConstant && beta.len() != 1 {
            return Err(invalid("single-constant mean takes exactly one coefficient"));
        }
        if beta.is_empty() {
            return Err(invalid("mean needs at least one coefficient"));
        }
        Ok(Self { kind, beta })
    }

    /// Checks the coefficient count against the number of sources.
    pub fn check_sources(&self, n_sources: usize) -> Result<()> {
        let need = self.kind.n_coefficients(n_sources);
        if self.beta.len() != need {
            return Err(invalid(format!(
                "mean has {} coefficients, {} sources need {}",
                self.beta.len(),
                n_sources,
                need
            )));
        }
        Ok(())
    }
}

/// Prior mean at `point`.
pub fn mean_value(point: &MixedPoint, mean: &MeanSpec) -> Result<f64> {
    let idx = mean.kind.basis_index(point.source);
    mean.beta.get(idx).copied().ok_or_else(|| invalid(format!("no mean coefficient for source {}", point.source)))
}
