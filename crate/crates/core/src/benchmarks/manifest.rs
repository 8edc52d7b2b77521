use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Problem;
use crate::error::{invalid, Error, Result};
use crate::numopt::{fd_gradient, minimize, sobol_sample, BoxBounds, FnObjective, LbfgsConfig};

const MANIFEST: &str = include_str!("../../manifest/benchmarks.toml");

/// Checked-in metadata of one built-in problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub dx: usize,
    pub n_constraints: usize,
    pub labels: Vec<String>,
    pub costs: Vec<f64>,
    pub initial_counts: Vec<usize>,
    pub noise_small: f64,
    pub noise_large: f64,
    /// Published relative errors of the low-fidelity sources; a magnitude
    /// reference for the in-repo forms, not a target.
    pub rrmse_reference: Vec<f64>,
    pub stop_threshold: f64,
    /// Constrained minimum of the noiseless high-fidelity source.
    pub optimum: f64,
    pub optimum_x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub problem: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn get(&self, name: &str) -> Option<&ManifestEntry> {
        self.problem.iter().find(|e| e.name == name)
    }
}

impl ManifestEntry {
    /// Lists every metadata field of `problem` that disagrees with the entry.
    pub fn mismatches(&self, problem: &Problem) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |field: &str, ok: bool| {
            if !ok {
                out.push(field.to_string());
            }
        };
        check("name", self.name == problem.name);
        check("dx", self.dx == problem.dx());
        check("n_constraints", self.n_constraints == problem.n_constraints);
        check("labels", self.labels.iter().eq(problem.sources.iter().map(|s| &s.label)));
        check("costs", self.costs == problem.costs());
        check("initial_counts", self.initial_counts == problem.initial_counts());
        check("noise_small", self.noise_small == problem.noise.small);
        check("noise_large", self.noise_large == problem.noise.large);
        check("stop_threshold", self.stop_threshold == problem.stop.threshold);
        check("rrmse_reference", self.rrmse_reference.len() + 1 == problem.n_sources());
        out
    }
}

/// The checked-in benchmark manifest.
pub fn manifest() -> Manifest {
    Manifest::parse(MANIFEST).expect("checked-in manifest parses")
}

/// A constrained minimizer of the noiseless high-fidelity source.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub value: f64,
    pub x: Vec<f64>,
    pub max_violation: f64,
}

/// Multistart quadratic-penalty search for the constrained minimum of the
/// noiseless high-fidelity source.
///
/// Works in unit coordinates with the objective scaled by its spread over
/// the starts. Each start runs L-BFGS on finite-difference gradients under
/// a penalty weight raised geometrically; the best point whose worst
/// violation is below `1e-6` wins. Categorical inputs are held at level 0.
pub fn constrained_hf_optimum(problem: &Problem, n_starts: usize, seed: u64) -> Result<GroundTruth> {
    if n_starts == 0 {
        return Err(invalid("need at least one start"));
    }
    let dx = problem.dx();
    let t = vec![0; problem.categorical.len()];
    let hf = &problem.sources[problem.hf];
    let raw = |u: &[f64]| {
        let mut x = problem.bounds.from_unit(u);
        problem.bounds.project(&mut x);
        ((hf.objective)(&x, &t), hf.constraints.iter().map(|g| g(&x, &t)).collect::<Vec<f64>>())
    };
    let starts = sobol_sample::<f64>(n_starts, dx, Some(seed))?;
    let values: Vec<f64> = starts.iter().map(|u| raw(u).0).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let spread = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
    let scale = if spread > 0.0 { spread } else { 1.0 };
    let unit = BoxBounds::unit(dx);
    let config = LbfgsConfig::default().with_tol(1e-9).with_max_iter(300).with_f_tol(1e-14);

    let solve = |u0: &Vec<f64>| -> Option<(f64, f64, Vec<f64>)> {
        let mut u = u0.clone();
        for rho in [1e1, 1e3, 1e5, 1e7] {
            let penalized = |v: &[f64]| {
                let (f, g) = raw(v);
                f / scale + rho * g.iter().map(|c| c.max(0.0).powi(2)).sum::<f64>()
            };
            let obj = FnObjective { f: penalized, grad: |v: &[f64]| fd_gradient(penalized, v, 1e-7) };
            u = minimize(&obj, &u, &unit, &config).ok()?.x;
        }
        let (f, g) = raw(&u);
        let viol = g.iter().fold(0.0f64, |a, c| a.max(*c));
        f.is_finite().then_some((f, viol, u))
    };
    let found: Vec<(f64, f64, Vec<f64>)> = starts.par_iter().filter_map(solve).collect();
    let best = found
        .iter()
        .filter(|(_, v, _)| *v <= 1e-6)
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or_else(|| Error::NumericalFailure("no start reached a feasible point".into()))?;
    let mut x = problem.bounds.from_unit(&best.2);
    problem.bounds.project(&mut x);
    Ok(GroundTruth { value: best.0, x, max_violation: best.1 })
}
