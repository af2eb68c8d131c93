//! End-to-end tests of the `psrlab` binary: subcommand round trips, output
//! formats, and exit codes (0 ok, 2 parse, 3 budget, 4 invalid model).

use std::path::Path;
use std::process::{Command, Output};

fn psrlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psrlab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn lock_lift_plan_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = psrlab(
        &["make-lock", "--alpha", "0.2", "--horizon", "3", "--seed", "7", "--out", "lock.json"],
        d,
    );
    assert!(out.status.success());

    let diag = stdout_json(&psrlab(&["diagnose", "lock.json"], d));
    let sigma = diag["sigma_min"].as_array().unwrap();
    let reveal = std::f64::consts::SQRT_2 * 0.2;
    assert!((sigma[0].as_f64().unwrap() - reveal).abs() < 1e-12);

    let lift = stdout_json(&psrlab(&["lift", "--pomdp", "lock.json", "--out", "psr.json"], d));
    assert!(lift["model"]["coreTests"].is_array());
    assert!(lift["alpha"].as_f64().unwrap() > 0.2);

    let plan = stdout_json(&psrlab(&["plan", "psr.json", "--out", "policy.json"], d));
    assert!((plan["value"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!(d.join("policy.json").exists());

    // the written PSR file parses back through diagnose
    let psr_diag = stdout_json(&psrlab(&["diagnose", "psr.json"], d));
    assert_eq!(psr_diag["valid"], serde_json::Value::Bool(true));
}

#[test]
fn simulate_streams_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    psrlab(&["make-lock", "--alpha", "0.1", "--horizon", "4", "--out", "lock.json"], d);
    let out = psrlab(
        &["simulate", "--pomdp", "lock.json", "--episodes", "5", "--seed", "3"],
        d,
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    for line in lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["obs"].as_array().unwrap().len(), 4);
        assert_eq!(v["act"].as_array().unwrap().len(), 4);
        assert!(v["reward"].is_number());
    }
}

#[test]
fn run_crane_writes_trace_with_fixed_header() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    psrlab(&["make-lock", "--alpha", "0.2", "--horizon", "3", "--seed", "7", "--out", "lock.json"], d);
    std::fs::write(
        d.join("spec.json"),
        r#"{"family":"lock","horizon":3,"alpha":0.2,"seed":7}"#,
    )
    .unwrap();
    let out = psrlab(
        &[
            "run-crane", "--env", "lock.json", "--class", "spec.json", "-K", "15", "--seed",
            "1", "--out", "trace.csv",
        ],
        d,
    );
    let summary = stdout_json(&out);
    assert_eq!(summary["iterations"], 15);
    let csv = std::fs::read_to_string(d.join("trace.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "k,V_star,V_pik_true,V_pik_optimistic,conf_set_size,fstar_in_set,cum_regret,tv_max,b_err_max,wall_ms"
    );
    assert_eq!(csv.lines().count(), 16);
}

#[test]
fn run_experiment_and_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = serde_json::json!({
        "environment": {"lock": {"alpha": 0.2, "act": 2, "horizon": 3, "seed": 7}},
        "model_class": "lock_family",
        "K": 10,
        "seeds": [0, 1],
        "out_dir": d.join("out"),
    });
    std::fs::write(d.join("cfg.json"), cfg.to_string()).unwrap();
    let report = stdout_json(&psrlab(&["run-experiment", "--config", "cfg.json"], d));
    assert_eq!(report["per_seed"].as_array().unwrap().len(), 2);
    assert!((report["v_star"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!(d.join("out/trace_seed0.csv").exists());
    assert!(d.join("out/summary.json").exists());

    let agg = stdout_json(&psrlab(&["summarize", "--dir", d.join("out").to_str().unwrap()], d));
    assert_eq!(agg["traces"].as_array().unwrap().len(), 2);
}

#[test]
fn parse_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("broken.json"), "{not json").unwrap();
    let out = psrlab(&["diagnose", "broken.json"], d);
    assert_eq!(out.status.code(), Some(2));

    // unknown config key is a strict-parse failure
    std::fs::write(d.join("cfg.json"), r#"{"K": 5, "seeds": [0], "out_dir": "o", "bogus": 1}"#)
        .unwrap();
    let out = psrlab(&["run-experiment", "--config", "cfg.json"], d);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_model_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // alpha outside (0, 1/(2 sqrt 2)) is an invalid lock
    let out = psrlab(&["make-lock", "--alpha", "0.9", "--horizon", "3", "--out", "x.json"], d);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn budget_overrun_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    psrlab(&["make-lock", "--alpha", "0.2", "--horizon", "3", "--out", "lock.json"], d);
    let out = Command::new(env!("CARGO_BIN_EXE_psrlab"))
        .args(["diagnose", "lock.json"])
        .env("PSRLAB_BUDGET", "2")
        .current_dir(d)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}
