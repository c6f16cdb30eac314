//! End-to-end checks of the binary: exit codes, reproducibility of the
//! JSON summaries, and the emitted artifacts.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_conormal"))
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("conormal_cli_{tag}_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL_CONFIG: &str = r#"{
  "grid": {"n": 1, "m": 1, "points": 32, "period": 6.283185307179586,
           "t_min": 1e-3, "t_max": 10.0, "t_nodes": 48},
  "coefficients": {"kind": "identity"},
  "weight": {"alpha": 0.0},
  "seed": 11
}"#;

const PERTURBED_CONFIG: &str = r#"{
  "grid": {"n": 1, "m": 1, "points": 8, "period": 6.283185307179586,
           "t_min": 1e-2, "t_max": 5.0, "t_nodes": 32},
  "coefficients": {"kind": "expression",
    "entries": [["1 + 0.06/((log(t))^2 + 1)", "0"],
                ["0", "1 + 0.04*sin(x)/((log(t))^2 + 1)"]]},
  "weight": {"alpha": 0.0},
  "seed": 3
}"#;

/// The classical comparison window t in [0.1, 1] needs the boundary
/// resolution of the full desk-scale grid.
const CAUCHY_CONFIG: &str = r#"{
  "grid": {"n": 1, "m": 1, "points": 256, "period": 6.283185307179586,
           "t_min": 1e-3, "t_max": 10.0, "t_nodes": 32},
  "coefficients": {"kind": "identity"},
  "weight": {"alpha": 0.0},
  "seed": 11
}"#;

#[test]
fn reproduce_cauchy_passes_and_is_deterministic() {
    let dir = workdir("cauchy");
    let cfg = write_config(&dir, "config.json", CAUCHY_CONFIG);
    let out1 = dir.join("run1");
    let out2 = dir.join("run2");
    for out in [&out1, &out2] {
        let status = bin()
            .args(["reproduce-cauchy", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
    }
    let s1 = std::fs::read(out1.join("reproduce_cauchy.json")).unwrap();
    let s2 = std::fs::read(out2.join("reproduce_cauchy.json")).unwrap();
    assert_eq!(s1, s2, "summaries must be bit-identical for equal config and seed");
    assert!(out1.join("cauchy_agreement.csv").exists());

    // --quick halves the resolution and widens the tolerance
    let out3 = dir.join("quick");
    let status = bin()
        .args(["reproduce-cauchy", "--quick", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out3)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let quick: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out3.join("reproduce_cauchy.json")).unwrap())
            .unwrap();
    assert_eq!(quick["results"]["tolerance"].as_f64(), Some(2e-3));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn solve_emits_fields_and_summary() {
    let dir = workdir("solve");
    let cfg = write_config(&dir, "config.json", PERTURBED_CONFIG);
    let out = dir.join("out");
    let status = bin()
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("conormal_gradient.cnf").exists());
    assert!(out.join("trace.cnf").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("solve.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], serde_json::Value::Bool(true));
    assert!(summary["config_hash"].as_str().unwrap().len() == 16);
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn verify_suites_run_and_unknown_suite_exits_2() {
    let dir = workdir("verify");
    let cfg = write_config(&dir, "config.json", SMALL_CONFIG);
    for suite in ["calculus", "sio"] {
        let status = bin()
            .args(["verify", "--suite", suite, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.join("out"))
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0), "suite {suite}");
    }
    let status = bin()
        .args(["verify", "--suite", "nonsense", "--config"])
        .arg(&cfg)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn config_errors_exit_2() {
    let dir = workdir("badcfg");
    // missing grid section
    let bad = write_config(&dir, "bad.json", r#"{"weight": {"alpha": 0.0}}"#);
    let status = bin()
        .args(["reproduce-cauchy", "--config"])
        .arg(&bad)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    // alpha out of range
    let bad2 = write_config(
        &dir,
        "bad2.json",
        &SMALL_CONFIG.replace("\"alpha\": 0.0", "\"alpha\": 3.0"),
    );
    let status = bin()
        .args(["solve", "--config"])
        .arg(&bad2)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    // missing config flag entirely
    let status = bin().args(["solve"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn empty_sweep_values_exit_2() {
    let dir = workdir("sweep");
    let cfg = write_config(&dir, "config.json", SMALL_CONFIG);
    let status = bin()
        .args(["sweep", "--parameter", "epsilon", "--config"])
        .arg(&cfg)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    std::fs::remove_dir_all(dir).ok();
}
