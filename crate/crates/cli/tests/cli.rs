use std::fs;
use std::process::Command;

use cmfbo::benchmarks::{by_name, initial_design, NoiseLevel};
use cmfbo_cli::{main_with, mean, median, read_records, record_path, summary_path};

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("cmfbo").chain(args.iter().copied());
    let code = main_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

const QUICK: [&str; 6] = ["--max-iters", "2", "--restarts", "2", "--jobs", "1"];

fn run_quick(dir: &str, extra: &[&str]) -> (i32, String, String) {
    let mut args = vec!["run", "--out", dir];
    args.extend(QUICK);
    args.extend(extra);
    cli(&args)
}

fn summary_rows(dir: &std::path::Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().flexible(true).has_headers(false).from_path(summary_path(dir)).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn run_writes_one_file_per_rep_and_a_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("results");
    let (code, _, err) =
        run_quick(dir.to_str().unwrap(), &["--problem", "branin", "--noise", "small", "--reps", "2", "--seed", "7"]);
    assert_eq!(code, 0, "{err}");
    let mut names: Vec<String> =
        fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, vec!["run_000.ndjson", "run_001.ndjson", "summary.csv"]);

    let rows = summary_rows(&dir);
    assert_eq!(
        rows[0],
        vec!["rep", "final_optimum", "total_cost", "hf_count", "lf1_count", "iterations", "stop_reason"]
    );
    let data = &rows[1..3];
    for (rep, row) in data.iter().enumerate() {
        let records = read_records(&record_path(&dir, rep)).unwrap();
        let iterations: usize = row[5].parse().unwrap();
        assert_eq!(records.len(), iterations);
        let hf: f64 = row[3].parse().unwrap();
        let lf: f64 = row[4].parse().unwrap();
        let total: f64 = row[2].parse().unwrap();
        assert_eq!(total, 10.0 * hf + lf);
        assert_eq!(records.last().unwrap().cumulative_cost, total);
        for (i, r) in records.iter().enumerate() {
            assert_eq!(r.q, i + 1);
        }
    }
    let finals: Vec<f64> = data.iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(rows[3], vec!["mean".to_string(), mean(&finals).to_string()]);
    assert_eq!(rows[4], vec!["median".to_string(), median(&finals).to_string()]);
}

#[test]
fn records_replay_final_optimum() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let (code, _, err) = run_quick(dir.to_str().unwrap(), &["--problem", "branin", "--reps", "1", "--seed", "3"]);
    assert_eq!(code, 0, "{err}");
    let records = read_records(&record_path(dir, 0)).unwrap();
    let stored: f64 = summary_rows(dir)[1][1].parse().unwrap();

    let p = by_name("branin").unwrap();
    let init = initial_design(&p, NoiseLevel::Small, 3).unwrap();
    let mut best = f64::INFINITY;
    for i in 0..init.len() {
        if init.points[i].source == 0 && init.is_feasible(i) {
            best = best.min(init.y[i]);
        }
    }
    for r in &records {
        if r.source == 0 && r.g.iter().all(|v| *v <= 0.0) {
            best = best.min(r.y);
        }
    }
    let window = 10;
    let start = records.len().saturating_sub(window);
    let replay = records[start..].iter().filter(|r| r.pao_feasible).map(|r| r.y_pao).fold(best, f64::min);
    assert_eq!(replay, stored);
}

#[test]
fn numbers_round_trip_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(run_quick(dir.to_str().unwrap(), &["--problem", "branin", "--reps", "1"]).0, 0);
    let text = fs::read_to_string(record_path(dir, 0)).unwrap();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let rec: cmfbo::driver::IterationRecord = serde_json::from_str(line).unwrap();
        assert_eq!(v["y"].as_f64().unwrap(), rec.y);
        assert_eq!(serde_json::to_string(&rec).unwrap(), line);
        for key in ["q", "source", "u", "y", "g", "cumulative_cost", "y*_PAO", "stopped_reason"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}

#[test]
fn csfbo_samples_high_fidelity_only() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let (code, _, err) = run_quick(dir.to_str().unwrap(), &["--problem", "branin", "--reps", "1", "--method", "csfbo"]);
    assert_eq!(code, 0, "{err}");
    let rows = summary_rows(dir);
    assert_eq!(rows[0], vec!["rep", "final_optimum", "total_cost", "hf_count", "iterations", "stop_reason"]);
    let hf: f64 = rows[1][3].parse().unwrap();
    assert_eq!(rows[1][2].parse::<f64>().unwrap(), 10.0 * hf);
    assert_eq!(hf, 11.0 + rows[1][4].parse::<f64>().unwrap());
    assert!(read_records(&record_path(dir, 0)).unwrap().iter().all(|r| r.source == 0));
}

#[test]
fn list_shows_all_problems() {
    let (code, out, _) = cli(&["list"]);
    assert_eq!(code, 0);
    for name in ["branin", "hartmann", "wing", "wing_sep", "polymix"] {
        assert!(out.lines().any(|l| l.starts_with(name)), "{name} missing");
    }
}

#[test]
fn rrmse_prints_every_low_fidelity_source() {
    let (code, out, _) = cli(&["rrmse", "--problem", "wing", "--n-probe", "500"]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().filter(|l| l.starts_with("wing")).count(), 3);
}

#[test]
fn validate_passes_on_builtins() {
    let (code, out, _) = cli(&["validate", "--problem", "hartmann"]);
    assert_eq!(code, 0, "{out}");
    assert!(!out.contains("FAIL"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(cli(&["run", "--problem", "nope"]).0, 2);
    assert_eq!(cli(&["run"]).0, 2);
    assert_eq!(cli(&["run", "--problem", "branin", "--noise", "medium"]).0, 2);
    assert_eq!(cli(&["run", "--problem", "branin", "--reps", "0"]).0, 2);
    assert_eq!(cli(&["run", "--problem", "branin", "--eps", "-1"]).0, 2);
    assert_eq!(cli(&["run", "--problem", "branin", "--v", "1"]).0, 2);
    assert_eq!(cli(&["frobnicate"]).0, 2);
    assert_eq!(cli(&["validate", "--problem", "nope"]).0, 2);
    assert_eq!(cli(&["--help"]).0, 0);
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("plain-file");
    fs::write(&file, "x").unwrap();
    let target = file.join("sub");
    let (code, _, err) = run_quick(target.to_str().unwrap(), &["--problem", "branin", "--reps", "1"]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error"));
}

#[test]
fn binary_uses_output_directory_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_cmfbo"))
        .args(["run", "--problem", "branin", "--reps", "1"])
        .args(QUICK)
        .env("CMFBO_OUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(summary_path(tmp.path()).exists());
    assert!(record_path(tmp.path(), 0).exists());

    let bad = Command::new(env!("CARGO_BIN_EXE_cmfbo")).args(["run", "--problem", "nope"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
