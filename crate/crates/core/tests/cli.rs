//! End-to-end runs of the `mvmctl` binary on small configurations.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};

fn small_config() -> Value {
    json!({
        "prior": {"atoms": [-1.0, 1.0], "weights": [0.5, 0.5]},
        "actions": {"R": 2, "K": 4, "d": 1, "levels": [0.0, 0.5, 1.0]},
        "cost": {"kind": "variance_plus_effort", "lambda": 0.1, "beta": 1.0},
        "solver": {"n": 2, "n_list": [0, 1, 2], "m": 16, "quad": 12, "L": 4, "tol": 1e-10},
        "simulation": {"M": 400, "dt": 0.0625, "seed": 7, "write_paths": 2},
        "check": {"samples": 200, "euler_dt": 1e-3}
    })
}

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new(config: &Value) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("config.json"), serde_json::to_string_pretty(config).unwrap()).unwrap();
        Self { dir }
    }

    fn config(&self) -> PathBuf {
        self.dir.path().join("config.json")
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn exec(&self, args: &[&str]) -> i32 {
        let status = Command::new(env!("CARGO_BIN_EXE_mvmctl"))
            .args(args)
            .status()
            .unwrap();
        status.code().unwrap()
    }

    /// `mvmctl <cmd> --config <cfg> --out <dir> <extra>`; returns the exit code.
    fn cmd(&self, cmd: &str, out: &str, extra: &[&str]) -> i32 {
        let config = self.config();
        let out = self.out(out);
        let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        self.exec(&args)
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn data_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn outputs_are_identical_across_runs_and_worker_counts() {
    let run = Run::new(&small_config());
    assert_eq!(run.cmd("solve", "a", &["--workers", "1"]), 0);
    assert_eq!(run.cmd("solve", "b", &["--workers", "4"]), 0);
    for file in ["value.csv", "policy.csv", "metadata.json", "refinement.csv"] {
        let a = std::fs::read(run.out("a").join(file)).unwrap();
        let b = std::fs::read(run.out("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
    let value = run.out("a");
    let value = value.to_str().unwrap();
    assert_eq!(run.cmd("simulate", "s1", &["--workers", "1", "--value", value]), 0);
    assert_eq!(run.cmd("simulate", "s2", &["--workers", "3", "--value", value]), 0);
    assert_eq!(run.cmd("simulate", "s3", &["--workers", "3", "--value", value]), 0);
    for file in ["summary.json", "path_00000.csv", "path_00001.csv"] {
        let a = std::fs::read(run.out("s1").join(file)).unwrap();
        assert_eq!(a, std::fs::read(run.out("s2").join(file)).unwrap(), "{file} differs");
        assert_eq!(a, std::fs::read(run.out("s3").join(file)).unwrap(), "{file} differs");
    }
    // a different seed gives a different sample
    assert_eq!(run.cmd("simulate", "s4", &["--seed", "8", "--value", value]), 0);
    assert_ne!(
        std::fs::read(run.out("s1").join("summary.json")).unwrap(),
        std::fs::read(run.out("s4").join("summary.json")).unwrap()
    );
}

#[test]
fn artifacts_carry_hash_and_columns() {
    let run = Run::new(&small_config());
    assert_eq!(run.cmd("solve", "o", &[]), 0);
    let text = std::fs::read_to_string(run.out("o").join("value.csv")).unwrap();
    let mut lines = text.lines();
    let stamp = lines.next().unwrap();
    assert!(stamp.starts_with("# config_hash=") && stamp.contains("version=mvm-control/"));
    assert_eq!(lines.next().unwrap(), "node,theta_1,theta_2,value,argmin");
    let policy = std::fs::read_to_string(run.out("o").join("policy.csv")).unwrap();
    assert_eq!(policy.lines().nth(1).unwrap(), "node,theta_1,theta_2,action,v_1");
    let meta = read_json(&run.out("o").join("metadata.json"));
    assert_eq!(stamp, format!("# config_hash={}, version={}", meta["config_hash"].as_str().unwrap(), meta["version"].as_str().unwrap()));

    let solve = read_json(&run.out("o").join("solve.json"));
    assert!(solve["checks"].as_array().unwrap().iter().all(|c| c["status"] == "pass"));
    let refinement = data_rows(&run.out("o").join("refinement.csv"));
    let values: Vec<f64> = refinement.iter().map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(values.len(), 3);
    assert!(values.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn constant_cost_solves_to_c_over_beta() {
    let mut cfg = small_config();
    cfg["prior"] = json!({"atoms": [-1.0, 0.0, 1.0], "weights": [0.2, 0.3, 0.5]});
    cfg["cost"] = json!({"kind": "constant", "c": 0.7, "beta": 2.0});
    let run = Run::new(&cfg);
    assert_eq!(run.cmd("solve", "o", &[]), 0);
    for row in data_rows(&run.out("o").join("value.csv")) {
        let v: f64 = row[4].parse().unwrap();
        assert!((v - 0.35).abs() < 1e-9, "value {v}");
    }
}

#[test]
fn evaluate_feedback_and_constant_policies() {
    let run = Run::new(&small_config());
    assert_eq!(run.cmd("solve", "o", &[]), 0);
    assert_eq!(run.cmd("evaluate", "o", &[]), 0);
    let report = read_json(&run.out("o").join("evaluate.json"));
    assert_eq!(report["pass"], true);
    let budget = &report["epsilon_budget"];
    let parts: f64 = ["iteration_tol", "interpolation_modulus", "mc_error", "truncation", "time_discretization"]
        .iter()
        .map(|k| budget[*k].as_f64().unwrap())
        .sum();
    assert!((parts - budget["total"].as_f64().unwrap()).abs() < 1e-12);
    assert_eq!(run.cmd("evaluate", "o", &["--constant", "0"]), 0);
    let report = read_json(&run.out("o").join("evaluate.json"));
    assert_eq!(report["policy"], "constant:0");
}

#[test]
fn check_suite_passes_on_a_valid_config() {
    let run = Run::new(&small_config());
    assert_eq!(run.cmd("check", "o", &[]), 0);
    let report = read_json(&run.out("o").join("check.json"));
    assert_eq!(report["all_pass"], true);
    assert!(report["checks"].as_array().unwrap().len() > 5);
}

#[test]
fn exit_code_for_bad_config() {
    let run = Run::new(&json!({"prior": {"atoms": [1.0]}}));
    assert_eq!(run.cmd("solve", "o", &[]), 2);
    let mut cfg = small_config();
    cfg["prior"]["atoms"] = json!([-3.0, 1.0]);
    assert_eq!(Run::new(&cfg).cmd("solve", "o", &[]), 2, "atom outside the action radius");
    assert_eq!(run.exec(&["solve", "--config", "/nonexistent/config.json"]), 2);
}

#[test]
fn exit_code_for_corrupted_prior_weights() {
    let mut cfg = small_config();
    cfg["prior"]["weights"] = json!([0.6, 0.5]);
    let run = Run::new(&cfg);
    assert_eq!(run.cmd("check", "o", &[]), 5);
    let report = read_json(&run.out("o").join("check.json"));
    assert_eq!(report["all_pass"], false);
    assert_eq!(report["checks"][0]["status"], "fail");
}

#[test]
fn exit_code_for_non_convergence() {
    let mut cfg = small_config();
    cfg["solver"]["max_iter"] = json!(2);
    cfg["solver"]["n_list"] = Value::Null;
    assert_eq!(Run::new(&cfg).cmd("solve", "o", &[]), 4);
}

#[test]
fn exit_code_for_artifact_mismatch() {
    let run = Run::new(&small_config());
    assert_eq!(run.cmd("solve", "o", &[]), 0);
    let mut other = small_config();
    other["prior"] = json!({"atoms": [-1.0, 0.5], "weights": [0.5, 0.5]});
    let second = Run::new(&other);
    let value = run.out("o");
    assert_eq!(second.cmd("evaluate", "e", &["--value", value.to_str().unwrap()]), 6);
}

/// Compares a fresh closed-loop estimate with one stored from an earlier run
/// under a different seed.
#[test]
fn simulation_matches_stored_reference() {
    let reference = read_json(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/reference_summary.json"));
    let run = Run::new(&small_config());
    assert_eq!(run.cmd("simulate", "o", &["--seed", "2024"]), 0);
    let fresh = read_json(&run.out("o").join("summary.json"));
    let get = |v: &Value, k: &str| v["estimate"][k].as_f64().unwrap();
    let diff = (get(&fresh, "mean") - get(&reference, "mean")).abs();
    let se = get(&fresh, "stderr").hypot(get(&reference, "stderr"));
    assert!(diff <= 4.0 * se, "fresh {fresh} vs reference {reference}");
}

#[test]
fn shipped_benchmark_config_builds() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/benchmark.json");
    let cfg = mvm_control::config::ExperimentConfig::load(&path).unwrap();
    let exp = cfg.build().unwrap();
    assert_eq!(exp.actions.len(), 5);
    assert_eq!(exp.grid.len(), 65);
}
