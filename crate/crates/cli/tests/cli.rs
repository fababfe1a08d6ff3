use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_fisherflow");

fn fisherflow(args: &[&str], out: &Path) -> Output {
    Command::new(BIN).args(args).env("FISHERFLOW_OUT", out).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&fisherflow(&[], d)), 2);
    assert_eq!(code(&fisherflow(&["verify"], d)), 2);
    assert_eq!(code(&fisherflow(&["verify", "--exp", "nosuch"], d)), 2);
    assert_eq!(code(&fisherflow(&["flow", "--flow", "heat", "--T", "0.01", "--tau", "0.001"], d)), 2);
    assert_eq!(code(&fisherflow(&["flow", "--flow", "jko", "--T", "0.01", "--tau", "0.003"], d)), 2);
    let bad = write(d, "bad.json", r#"{"kind": "polar_star", "r0": 1, "a": 1.5, "k": 3, "h": 0.05}"#);
    assert_eq!(code(&fisherflow(&["mesh", "--spec", &bad], d)), 2);
    let config = write(d, "c.json", r#"{"porous_fisher": {"m_values": [1.5]}}"#);
    assert_eq!(code(&fisherflow(&["verify", "--exp", "porous_fisher", "--config", &config], d)), 2);
}

#[test]
fn list_describes_every_experiment_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let o = fisherflow(&["verify", "--list"], dir.path());
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 9);
    for name in ["fisher_convex", "wasserstein_contraction", "gradient_estimate", "porous_fisher"] {
        assert!(text.contains(name));
    }
    assert!(!dir.path().join("verify").exists());
}

#[test]
fn mesh_exports_mesh_and_curvature() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "star.json", r#"{"kind": "polar_star", "r0": 1, "a": 0.5, "k": 3, "h": 0.05}"#);
    assert_eq!(code(&fisherflow(&["mesh", "--spec", &spec, "--seed", "5"], dir.path())), 0);
    let out = dir.path().join("mesh");
    let mesh = read_json(&out.join("mesh.json"));
    let curvature = read_json(&out.join("curvature.json"));
    assert_eq!(mesh["checksum"], curvature["mesh_checksum"]);
    assert!((curvature["S"].as_f64().unwrap() - 16.0).abs() < 1e-4);
    assert_eq!(mesh["m_matrix"], true);
    let run = read_json(&out.join("run.json"));
    assert_eq!(run["exit_code"], 0);
    assert_eq!(run["seed"], 5);
}

#[test]
fn verify_writes_reports_summary_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let o = fisherflow(&["verify", "--exp", "exact_chain_rule", "--seed", "3", "--out", out.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["pass"], true);
    assert_eq!(summary["seed"], 3);
    let report = read_json(&out.join("exact_chain_rule.json"));
    assert_eq!(report["seed"], 3);
    assert!(out.join("exact_chain_rule.csv").exists());
    assert_eq!(read_json(&out.join("run.json"))["exit_code"], 0);
}

#[test]
fn failed_verdicts_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "c.json", r#"{"tolerances": {"balance": 1e-9}}"#);
    let o = fisherflow(&["verify", "--exp", "exact_chain_rule", "--config", &config], dir.path());
    assert_eq!(code(&o), 1);
    let summary = read_json(&dir.path().join("verify").join("summary.json"));
    assert_eq!(summary["pass"], false);
}

#[test]
fn heat_flow_exports_a_curve() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "sq.json", r#"{"kind": "rectangle", "width": 1, "height": 1, "h": 0.05}"#);
    let o = fisherflow(&["flow", "--flow", "heat", "--T", "0.01", "--spec", &spec, "--every", "0.005"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("flow");
    let csv = std::fs::read_to_string(out.join("flow.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let mesh = read_json(&out.join("mesh.json"));
    let checksum = mesh["checksum"].as_str().unwrap();
    assert!(csv.lines().skip(1).all(|l| l.starts_with(checksum)));
    assert!(out.join("curve").join("manifest.json").exists());
    let entropy: Vec<f64> = read_json(&out.join("flow.json"))["entropy"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(entropy.windows(2).all(|w| w[1] < w[0]));
}
