//! Built-in constrained multi-fidelity test problems.
//!
//! Source 0 of every problem is the high-fidelity source; the others are
//! low-fidelity variants ordered as LF1, LF2, and so on. Noise is added to
//! high-fidelity objective values only.

pub mod functions;
mod manifest;

use std::fmt;
use std::sync::{Arc, LazyLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use manifest::{constrained_hf_optimum, manifest, GroundTruth, Manifest, ManifestEntry};

use crate::data::{MfDataset, MixedPoint};
use crate::error::{invalid, Result};
use crate::kernel::CategoricalSpec;
use crate::numopt::{sobol_sample, BoxBounds};
use crate::stopping::StopConfig;

/// Objective or constraint callback: continuous block and categorical
/// levels, in problem coordinates.
pub type SourceFn = Arc<dyn Fn(&[f64], &[usize]) -> f64 + Send + Sync>;

fn wrap(f: fn(&[f64]) -> f64) -> SourceFn {
    Arc::new(move |x: &[f64], _t: &[usize]| f(x))
}

/// One data source of a problem.
#[derive(Clone)]
pub struct Source {
    pub label: String,
    pub objective: SourceFn,
    pub constraints: Vec<SourceFn>,
    pub cost: f64,
    pub initial_count: usize,
}

impl fmt::Debug for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Source")
            .field("label", &self.label)
            .field("constraints", &self.constraints.len())
            .field("cost", &self.cost)
            .field("initial_count", &self.initial_count)
            .finish()
    }
}

/// Which high-fidelity noise level to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseLevel {
    None,
    Small,
    Large,
}

impl std::str::FromStr for NoiseLevel {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "small" => Ok(Self::Small),
            "large" => Ok(Self::Large),
            other => Err(invalid(format!("unknown noise level {other:?}"))),
        }
    }
}

/// Standard deviations of the high-fidelity noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub small: f64,
    pub large: f64,
}

impl NoiseSpec {
    pub fn std_dev(&self, level: NoiseLevel) -> f64 {
        match level {
            NoiseLevel::None => 0.0,
            NoiseLevel::Small => self.small,
            NoiseLevel::Large => self.large,
        }
    }
}

/// A constrained multi-source problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub bounds: BoxBounds,
    /// Categorical inputs other than the source label.
    pub categorical: CategoricalSpec,
    pub sources: Vec<Source>,
    /// Index of the high-fidelity source.
    pub hf: usize,
    pub noise: NoiseSpec,
    pub n_constraints: usize,
    pub stop: StopConfig,
}

impl Problem {
    /// Validates a user-defined problem.
    pub fn new(
        name: impl Into<String>,
        bounds: BoxBounds,
        categorical: CategoricalSpec,
        sources: Vec<Source>,
        hf: usize,
        noise: NoiseSpec,
        stop: StopConfig,
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(invalid("a problem needs at least one source"));
        }
        if hf >= sources.len() {
            return Err(invalid("high-fidelity index out of range"));
        }
        let k = sources[0].constraints.len();
        if sources.iter().any(|s| s.constraints.len() != k) {
            return Err(invalid("every source needs the same number of constraints"));
        }
        if sources.iter().any(|s| !(s.cost > 0.0) || !s.cost.is_finite()) {
            return Err(invalid("costs must be positive"));
        }
        if !(noise.small >= 0.0 && noise.large >= 0.0) {
            return Err(invalid("noise levels must be non-negative"));
        }
        Ok(Self { name: name.into(), bounds, categorical, sources, hf, noise, n_constraints: k, stop })
    }

    pub fn dx(&self) -> usize {
        self.bounds.dim()
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.sources.iter().map(|s| s.cost).collect()
    }

    pub fn initial_counts(&self) -> Vec<usize> {
        self.sources.iter().map(|s| s.initial_count).collect()
    }

    /// Cost of the initial design.
    pub fn initial_cost(&self) -> f64 {
        self.sources.iter().map(|s| s.cost * s.initial_count as f64).sum()
    }

    /// The high-fidelity source alone, with as many initial samples as the
    /// multi-source initial design costs (rounded).
    pub fn single_fidelity(&self) -> Problem {
        let hf = &self.sources[self.hf];
        let count = (self.initial_cost() / hf.cost).round().max(2.0) as usize;
        Problem {
            name: format!("{}-sf", self.name),
            bounds: self.bounds.clone(),
            categorical: self.categorical.clone(),
            sources: vec![Source { initial_count: count, ..hf.clone() }],
            hf: 0,
            noise: self.noise,
            n_constraints: self.n_constraints,
            stop: self.stop,
        }
    }

    pub fn with_stop(mut self, stop: StopConfig) -> Self {
        self.stop = stop;
        self
    }

    /// Noiseless objective and constraint values.
    pub fn evaluate_exact(&self, source: usize, x: &[f64], t: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check(source, x, t)?;
        let s = &self.sources[source];
        Ok(((s.objective)(x, t), s.constraints.iter().map(|g| g(x, t)).collect()))
    }

    fn check(&self, source: usize, x: &[f64], t: &[usize]) -> Result<()> {
        if source >= self.n_sources() {
            return Err(invalid(format!("source {source} out of range")));
        }
        if x.len() != self.dx() || x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("point does not match the problem dimension"));
        }
        let tol = 1e-12;
        let inside = x
            .iter()
            .zip(self.bounds.lower().iter().zip(self.bounds.upper()))
            .all(|(v, (l, u))| *v >= l - tol * l.abs().max(1.0) && *v <= u + tol * u.abs().max(1.0));
        if !inside {
            return Err(invalid("point lies outside the problem bounds"));
        }
        self.categorical.validate(t)
    }
}

/// Objective (noisy for the high-fidelity source) and constraint values.
pub fn evaluate(
    problem: &Problem,
    source: usize,
    x: &[f64],
    t: &[usize],
    noise: NoiseLevel,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<f64>)> {
    let (mut y, g) = problem.evaluate_exact(source, x, t)?;
    if source == problem.hf {
        let sd = problem.noise.std_dev(noise);
        if sd > 0.0 {
            let n = Normal::new(0.0, sd).map_err(|e| invalid(e.to_string()))?;
            y += n.sample(rng);
        }
    }
    Ok((y, g))
}

/// Sobol initial design with the problem's per-source counts.
///
/// Each source draws from its own scrambled sequence keyed by the seed;
/// categorical levels cycle through their combinations.
pub fn initial_design(problem: &Problem, noise: NoiseLevel, seed: u64) -> Result<MfDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = MfDataset::new(problem.n_constraints);
    let combos = if problem.categorical.is_empty() { vec![Vec::new()] } else { problem.categorical.enumerate() };
    for (j, src) in problem.sources.iter().enumerate() {
        let key = seed.wrapping_mul(1_000_003).wrapping_add(j as u64);
        let pts = sobol_sample::<f64>(src.initial_count, problem.dx(), Some(key))?;
        for (i, u) in pts.iter().enumerate() {
            let mut x = problem.bounds.from_unit(u);
            problem.bounds.project(&mut x);
            let t = combos[i % combos.len()].clone();
            let (y, g) = evaluate(problem, j, &x, &t, noise, &mut rng)?;
            data.push(MixedPoint::new(x, t, j), y, g)?;
        }
    }
    Ok(data)
}

/// Root-mean-square difference between a low-fidelity source and the
/// high-fidelity source over Sobol probes, relative to the high-fidelity
/// standard deviation.
pub fn rrmse(problem: &Problem, source: usize, n_probe: usize, seed: u64) -> Result<f64> {
    if source == problem.hf {
        return Err(invalid("relative error is defined for low-fidelity sources"));
    }
    if n_probe < 2 {
        return Err(invalid("need at least two probe points"));
    }
    let pts = sobol_sample::<f64>(n_probe, problem.dx(), Some(seed))?;
    let t = if problem.categorical.is_empty() { Vec::new() } else { vec![0; problem.categorical.len()] };
    let mut hf = Vec::with_capacity(n_probe);
    let mut sq = 0.0;
    for u in &pts {
        let mut x = problem.bounds.from_unit(u);
        problem.bounds.project(&mut x);
        let (h, _) = problem.evaluate_exact(problem.hf, &x, &t)?;
        let (l, _) = problem.evaluate_exact(source, &x, &t)?;
        sq += (l - h) * (l - h);
        hf.push(h);
    }
    let n = n_probe as f64;
    let mean = hf.iter().sum::<f64>() / n;
    let sd = (hf.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        return Err(invalid("high-fidelity source is constant over the probes"));
    }
    Ok((sq / n).sqrt() / sd)
}

fn source(label: &str, objective: fn(&[f64]) -> f64, constraints: Vec<SourceFn>, cost: f64, n: usize) -> Source {
    Source { label: label.into(), objective: wrap(objective), constraints, cost, initial_count: n }
}

pub fn branin() -> Problem {
    use functions::*;
    Problem::new(
        "branin",
        BoxBounds::unit(2),
        CategoricalSpec::empty(),
        vec![
            source("HF", branin_hf, vec![wrap(branin_hf_g1), wrap(branin_hf_g2)], 10.0, 9),
            source("LF1", branin_lf, vec![wrap(branin_lf_g1), wrap(branin_lf_g2)], 1.0, 18),
        ],
        0,
        NoiseSpec { small: 0.1, large: 0.2 },
        StopConfig::default(),
    )
    .expect("valid built-in problem")
}

pub fn hartmann() -> Problem {
    use functions::*;
    Problem::new(
        "hartmann",
        BoxBounds::unit(6),
        CategoricalSpec::empty(),
        vec![
            source("HF", hartmann_hf, vec![wrap(hartmann_hf_g1), wrap(hartmann_hf_g2)], 10.0, 18),
            source("LF1", hartmann_lf, vec![wrap(hartmann_lf_g1), wrap(hartmann_lf_g2)], 1.0, 36),
        ],
        0,
        NoiseSpec { small: 0.25, large: 0.5 },
        StopConfig::default(),
    )
    .expect("valid built-in problem")
}

fn wing_bounds() -> BoxBounds {
    BoxBounds::new(
        vec![150.0, 220.0, 6.0, -10.0, 16.0, 0.5, 0.08, 2.5, 1700.0, 0.025],
        vec![200.0, 300.0, 10.0, 10.0, 45.0, 1.0, 0.18, 6.0, 2500.0, 0.08],
    )
    .expect("valid bounds")
}

struct WingCallbacks {
    objectives: [SourceFn; 4],
    hf_constraint: SourceFn,
    lf_constraint: SourceFn,
}

// Shared by both wing variants so their common parts are the same callbacks.
static WING: LazyLock<WingCallbacks> = LazyLock::new(|| {
    use functions::*;
    WingCallbacks {
        objectives: [wrap(wing_hf), wrap(wing_lf1), wrap(wing_lf2), wrap(wing_lf3)],
        hf_constraint: wrap(wing_hf_g),
        lf_constraint: wrap(wing_lf_g),
    }
});

fn wing_like(name: &str, lf_constraints: [SourceFn; 3]) -> Problem {
    let cb = &*WING;
    let labels = ["HF", "LF1", "LF2", "LF3"];
    let costs = [1000.0, 100.0, 10.0, 1.0];
    let counts = [30, 60, 60, 60];
    let constraints =
        [cb.hf_constraint.clone(), lf_constraints[0].clone(), lf_constraints[1].clone(), lf_constraints[2].clone()];
    let sources = (0..4)
        .map(|j| Source {
            label: labels[j].into(),
            objective: cb.objectives[j].clone(),
            constraints: vec![constraints[j].clone()],
            cost: costs[j],
            initial_count: counts[j],
        })
        .collect();
    Problem::new(
        name,
        wing_bounds(),
        CategoricalSpec::empty(),
        sources,
        0,
        NoiseSpec { small: 0.5, large: 1.0 },
        StopConfig::default(),
    )
    .expect("valid built-in problem")
}

/// Wing weight with one constraint shared by every low-fidelity source.
pub fn wing() -> Problem {
    let shared = WING.lf_constraint.clone();
    wing_like("wing", [shared.clone(), shared.clone(), shared])
}

/// Wing weight with a distinct constraint per low-fidelity source.
pub fn wing_sep() -> Problem {
    use functions::*;
    wing_like("wing_sep", [wrap(wing_sep_lf1_g), wrap(wing_sep_lf2_g), wrap(wing_sep_lf3_g)])
}

pub fn polymix() -> Problem {
    use functions::*;
    Problem::new(
        "polymix",
        BoxBounds::uniform(20, -0.5, 0.5).expect("valid bounds"),
        CategoricalSpec::empty(),
        vec![
            source("HF", polymix_hf, vec![wrap(polymix_hf_g)], 200.0, 30),
            source("LF1", polymix_lf1, vec![wrap(polymix_lf1_g)], 100.0, 60),
            source("LF2", polymix_lf2, vec![wrap(polymix_lf2_g)], 50.0, 60),
            source("LF3", polymix_lf3, vec![wrap(polymix_lf3_g)], 10.0, 60),
            source("LF4", polymix_lf4, vec![wrap(polymix_lf4_g)], 5.0, 60),
        ],
        0,
        NoiseSpec { small: 0.5, large: 1.0 },
        StopConfig { window: 10, threshold: 0.5 },
    )
    .expect("valid built-in problem")
}

/// Names of the built-in problems.
pub const NAMES: [&str; 5] = ["branin", "hartmann", "wing", "wing_sep", "polymix"];

/// Every built-in problem.
pub fn registry() -> Vec<Problem> {
    vec![branin(), hartmann(), wing(), wing_sep(), polymix()]
}

/// Looks a problem up by name (case-insensitive; `-` and `_` are
/// interchangeable).
pub fn by_name(name: &str) -> Result<Problem> {
    let key = name.to_ascii_lowercase().replace('-', "_");
    match key.as_str() {
        "branin" | "branin_hoo" => Ok(branin()),
        "hartmann" | "hartman" => Ok(hartmann()),
        "wing" => Ok(wing()),
        "wing_sep" | "wingsep" => Ok(wing_sep()),
        "polymix" => Ok(polymix()),
        _ => Err(invalid(format!("unknown problem {name:?}"))),
    }
}
