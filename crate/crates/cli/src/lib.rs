//! Experiment runner behind the `cmfbo` binary.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cmfbo::benchmarks::{self, by_name, initial_design, manifest, rrmse, NoiseLevel, Problem};
use cmfbo::driver::{run, BoConfig, IterationRecord, RunResult};
use cmfbo::numopt::sobol_sample;
use cmfbo::stopping::StopConfig;
use cmfbo::TrainConfig;
use rayon::prelude::*;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "CMFBO_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "cmfbo", version, about = "Constrained cost-aware multi-fidelity Bayesian optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run repeated optimizations of a built-in problem.
    Run(RunArgs),
    /// List the built-in problems.
    List,
    /// Print relative errors of every low-fidelity source.
    Rrmse(RrmseArgs),
    /// Check a problem's definition against its manifest entry.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    Small,
    Large,
}

impl From<NoiseArg> for NoiseLevel {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::Small => NoiseLevel::Small,
            NoiseArg::Large => NoiseLevel::Large,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Every source, cost-aware.
    Cmfbo,
    /// High-fidelity source only.
    Csfbo,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub problem: String,
    #[arg(long, value_enum, default_value = "small")]
    pub noise: NoiseArg,
    #[arg(long, value_enum, default_value = "cmfbo")]
    pub method: Method,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub reps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Repetitions run concurrently; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Stopping window.
    #[arg(long, default_value_t = 10)]
    pub v: usize,
    /// Stopping threshold; defaults to the problem's.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e6)]
    pub max_cost: f64,
    /// Interval-score weight of the training loss.
    #[arg(long, default_value_t = 0.08)]
    pub is_weight: f64,
    /// Interval level of the training loss.
    #[arg(long, default_value_t = 0.05)]
    pub nu: f64,
    /// Training restarts of the first fit.
    #[arg(long, default_value_t = 8)]
    pub restarts: usize,
    #[arg(long, env = OUT_DIR_ENV, default_value = "results")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RrmseArgs {
    /// Restrict to one problem.
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    pub n_probe: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub problem: String,
}

/// A fully resolved experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub noise: NoiseLevel,
    pub method: Method,
    pub reps: usize,
    pub seed: u64,
    pub jobs: usize,
    pub bo: BoConfig,
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn from_args(args: &RunArgs) -> anyhow::Result<Self> {
        let base = by_name(&args.problem)?;
        let problem = match args.method {
            Method::Cmfbo => base,
            Method::Csfbo => base.single_fidelity(),
        };
        let stop = StopConfig::new(args.v, args.eps.unwrap_or(problem.stop.threshold))?;
        let train =
            TrainConfig { is_weight: args.is_weight, nu: args.nu, restarts: args.restarts, ..TrainConfig::default() };
        let bo =
            BoConfig { train, stop, max_iterations: args.max_iters, max_cost: args.max_cost, ..BoConfig::default() };
        bo.validate()?;
        Ok(Self {
            problem,
            noise: args.noise.into(),
            method: args.method,
            reps: args.reps as usize,
            seed: args.seed,
            jobs: args.jobs,
            bo,
            out: args.out.clone(),
        })
    }

    /// Seed of repetition `rep`.
    pub fn rep_seed(&self, rep: usize) -> u64 {
        self.seed.wrapping_add(rep as u64)
    }

    pub fn run_rep(&self, rep: usize) -> anyhow::Result<RunResult> {
        let cfg = BoConfig { seed: self.rep_seed(rep), ..self.bo.clone() };
        run(&self.problem, self.noise, &cfg).with_context(|| format!("repetition {rep}"))
    }

    /// Runs every repetition, at most `jobs` at a time.
    pub fn run_all(&self) -> anyhow::Result<Vec<RunResult>> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(self.jobs).build()?;
        pool.install(|| (0..self.reps).into_par_iter().map(|r| self.run_rep(r)).collect())
    }
}

/// Summary statistics of the final optima.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub rows: usize,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// File holding the per-iteration records of repetition `rep`.
pub fn record_path(dir: &Path, rep: usize) -> PathBuf {
    dir.join(format!("run_{rep:03}.ndjson"))
}

pub fn summary_path(dir: &Path) -> PathBuf {
    dir.join("summary.csv")
}

/// Writes one newline-delimited record file per run and a summary table.
pub fn write_records(results: &[RunResult], dir: &Path) -> anyhow::Result<Summary> {
    if results.is_empty() {
        bail!("no results to write");
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (rep, r) in results.iter().enumerate() {
        let path = record_path(dir, rep);
        let mut f =
            std::io::BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        for rec in &r.history {
            serde_json::to_writer(&mut f, rec)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
    }
    let n_sources = results[0].counts.len();
    let mut w = csv::WriterBuilder::new().flexible(true).from_path(summary_path(dir))?;
    let mut header = vec!["rep".to_string(), "final_optimum".into(), "total_cost".into(), "hf_count".into()];
    header.extend((1..n_sources).map(|j| format!("lf{j}_count")));
    header.extend(["iterations".to_string(), "stop_reason".into()]);
    w.write_record(&header)?;
    for (rep, r) in results.iter().enumerate() {
        let mut row = vec![rep.to_string(), r.final_optimum.to_string(), r.total_cost.to_string()];
        row.extend(r.counts.iter().map(|c| c.to_string()));
        row.extend([r.iterations.to_string(), r.stop_reason.to_string()]);
        w.write_record(&row)?;
    }
    let finals: Vec<f64> = results.iter().map(|r| r.final_optimum).collect();
    let summary = Summary { mean: mean(&finals), median: median(&finals), rows: results.len() };
    w.write_record(["mean".to_string(), summary.mean.to_string()])?;
    w.write_record(["median".to_string(), summary.median.to_string()])?;
    w.flush()?;
    Ok(summary)
}

/// Reads back one record file.
pub fn read_records(path: &Path) -> anyhow::Result<Vec<IterationRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let cfg = ExperimentConfig::from_args(args)?;
    let results = cfg.run_all()?;
    let summary = write_records(&results, &cfg.out)?;
    writeln!(
        out,
        "problem {} ({:?}), {} repetitions written to {}",
        cfg.problem.name,
        cfg.method,
        cfg.reps,
        cfg.out.display()
    )?;
    for (rep, r) in results.iter().enumerate() {
        writeln!(
            out,
            "  rep {rep}: final {} cost {} iterations {} ({})",
            r.final_optimum, r.total_cost, r.iterations, r.stop_reason
        )?;
    }
    writeln!(out, "mean {} median {}", summary.mean, summary.median)?;
    Ok(())
}

fn cmd_list(out: &mut dyn Write) -> anyhow::Result<()> {
    let m = manifest();
    writeln!(
        out,
        "{:<10} {:>3} {:>2} {:<32} {:<22} {:>9} {:>11}",
        "name", "dx", "K", "costs", "initial", "noise", "optimum"
    )?;
    for p in benchmarks::registry() {
        let entry = m.get(&p.name).with_context(|| format!("{} missing from manifest", p.name))?;
        writeln!(
            out,
            "{:<10} {:>3} {:>2} {:<32} {:<22} {:>9} {:>11.5}",
            p.name,
            p.dx(),
            p.n_constraints,
            format!("{:?}", p.costs()),
            format!("{:?}", p.initial_counts()),
            format!("{}/{}", p.noise.small, p.noise.large),
            entry.optimum
        )?;
    }
    Ok(())
}

fn cmd_rrmse(args: &RrmseArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let problems = match &args.problem {
        Some(name) => vec![by_name(name)?],
        None => benchmarks::registry(),
    };
    let m = manifest();
    writeln!(out, "{:<10} {:<6} {:>10} {:>10}", "problem", "source", "rrmse", "reference")?;
    for p in problems {
        let reference = m.get(&p.name).map(|e| e.rrmse_reference.clone()).unwrap_or_default();
        for j in (0..p.n_sources()).filter(|&j| j != p.hf) {
            let value = rrmse(&p, j, args.n_probe, args.seed)?;
            let r = reference.get(j - 1).map_or("-".to_string(), |v| v.to_string());
            writeln!(out, "{:<10} {:<6} {:>10.4} {:>10}", p.name, p.sources[j].label, value, r)?;
        }
    }
    Ok(())
}

/// Checks a problem against its manifest entry and basic invariants.
/// Returns one `(check, passed)` pair per check.
pub fn validate_problem(p: &Problem) -> anyhow::Result<Vec<(String, bool)>> {
    let m = manifest();
    let mut checks = Vec::new();
    match m.get(&p.name) {
        Some(entry) => {
            let bad = entry.mismatches(p);
            checks.push((format!("manifest metadata {bad:?}"), bad.is_empty()));
            let (y, g) = p.evaluate_exact(p.hf, &entry.optimum_x, &[])?;
            checks.push((
                "manifest optimum reproduces".into(),
                (y - entry.optimum).abs() <= 1e-9 * entry.optimum.abs().max(1.0),
            ));
            checks.push(("manifest optimum feasible".into(), g.iter().all(|v| *v <= 1e-6)));
        }
        None => checks.push(("manifest entry present".into(), false)),
    }
    let d = initial_design(p, NoiseLevel::None, 0)?;
    checks.push(("initial design counts".into(), d.source_counts(p.n_sources()) == p.initial_counts()));
    let again = initial_design(p, NoiseLevel::None, 0)?;
    checks.push(("initial design deterministic".into(), d == again));
    let probes = sobol_sample::<f64>(10_000, p.dx(), Some(0))?;
    let mut finite = true;
    for u in &probes {
        let mut x = p.bounds.from_unit(u);
        p.bounds.project(&mut x);
        for j in 0..p.n_sources() {
            let (y, g) = p.evaluate_exact(j, &x, &vec![0; p.categorical.len()])?;
            finite &= y.is_finite() && g.iter().all(|v| v.is_finite());
        }
    }
    checks.push(("finite over 10000 probes".into(), finite));
    checks.push(("positive costs".into(), p.costs().iter().all(|c| *c > 0.0)));
    Ok(checks)
}

fn cmd_validate(args: &ValidateArgs, out: &mut dyn Write) -> anyhow::Result<bool> {
    let p = by_name(&args.problem)?;
    let checks = validate_problem(&p)?;
    for (name, ok) in &checks {
        writeln!(out, "{} {name}", if *ok { "PASS" } else { "FAIL" })?;
    }
    Ok(checks.iter().all(|(_, ok)| *ok))
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 on a runtime failure, 2 on a usage error.
pub fn main_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    // unknown problem names are usage errors, not runtime failures
    let name = match &cli.command {
        Command::Run(a) => Some(a.problem.as_str()),
        Command::Rrmse(a) => a.problem.as_deref(),
        Command::Validate(a) => Some(a.problem.as_str()),
        Command::List => None,
    };
    if let Some(name) = name {
        if by_name(name).is_err() {
            let _ = writeln!(err, "error: unknown problem {name:?}; known problems: {}", benchmarks::NAMES.join(", "));
            return 2;
        }
    }
    if let Command::Run(a) = &cli.command {
        if let Some(eps) = a.eps {
            if !(eps > 0.0) {
                let _ = writeln!(err, "error: --eps must be positive");
                return 2;
            }
        }
        if a.v < 2 {
            let _ = writeln!(err, "error: --v must be at least 2");
            return 2;
        }
    }
    let outcome = match &cli.command {
        Command::Run(a) => cmd_run(a, out).map(|_| true),
        Command::List => cmd_list(out).map(|_| true),
        Command::Rrmse(a) => cmd_rrmse(a, out).map(|_| true),
        Command::Validate(a) => cmd_validate(a, out),
    };
    match outcome {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}
