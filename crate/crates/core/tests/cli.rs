use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn eqindex(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqindex"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn check_passes_on_exchange_economy() {
    let dir = tempfile::tempdir().unwrap();
    let out = eqindex(&["check", "--config", "ces-3eq"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report = json(&dir.path().join("check_report.json"));
    assert_eq!(report["passed"]["walras"], true);
}

#[test]
fn check_fails_on_broken_walras() {
    let dir = tempfile::tempdir().unwrap();
    let out = eqindex(&["check", "--config", "broken-walras"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let report = json(&dir.path().join("check_report.json"));
    assert!(report["walras_max_residual"].as_f64().unwrap() > 0.5);
}

#[test]
fn malformed_configs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let out = eqindex(&["check", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));

    fs::write(&bad, r#"{"version": 1, "economy": "ces-3eq", "colour": "blue"}"#).unwrap();
    let out = eqindex(&["solve", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = eqindex(&["solve", "--config", "ces-3eq", "--epsilon", "-1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn inline_economy_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("economy.json");
    fs::write(
        &cfg,
        r#"{
            "version": 1,
            "economy": {"agents": [
                {"weights": [0.5, 0.5], "rho": 0.0, "endowment": [1.0, 0.0]},
                {"weights": [0.5, 0.5], "rho": 0.0, "endowment": [0.0, 1.0]}
            ]},
            "settings": {"seed": 3, "sample_count": 200}
        }"#,
    )
    .unwrap();
    let out = eqindex(&["trace", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn solve_writes_rows_with_indices() {
    let dir = tempfile::tempdir().unwrap();
    let out = eqindex(&["solve", "--config", "cobb-douglas-2"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("equilibria.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "p_1,p_2,residual,g,index");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].ends_with(",1"));

    let out = eqindex(&["solve", "--config", "ces-3eq", "--format", "csv"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("equilibria.csv")).unwrap();
    let idx: Vec<&str> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(idx, ["1", "-1", "1"]);
}

#[test]
fn solve_reports_non_regular_fold() {
    let dir = tempfile::tempdir().unwrap();
    let out = eqindex(&["solve", "--config", "near-fold", "--format", "json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let report = json(&dir.path().join("equilibria.json"));
    assert_eq!(report["status"], "non_regular");
    assert!(!dir.path().join("equilibria.csv").exists());
}

#[test]
fn trace_on_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let out = eqindex(&["trace", "--config", "cobb-douglas-2"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let summary = json(&dir.path().join("trace_summary.json"));
    assert_eq!(summary["components"].as_array().unwrap().len(), 1);
    let report = json(&dir.path().join("theorem_report.json"));
    assert_eq!(report["verdict"], "verified");
    let csv = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(csv.starts_with("component_id,node_index,t,p_1,p_2,residual\n"));
    assert!(dir.path().join("theorem_report.txt").exists());

    let out = eqindex(&["trace", "--config", "ces-3eq", "--jobs", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let summary = json(&dir.path().join("trace_summary.json"));
    assert_eq!(summary["arcs"], 2);
    assert_eq!(summary["loops"], 0);
    assert_eq!(summary["sign_sum"], 0);
    assert_eq!(summary["recovered_index_sum"], 1);
    let report = json(&dir.path().join("theorem_report.json"));
    assert_eq!(report["index_sum"], 1);
}

#[test]
fn trace_on_broken_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = eqindex(&["trace", "--config", "broken-homogeneity"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let report = json(&dir.path().join("theorem_report.json"));
    assert_eq!(report["verdict"], "hypothesis_failed");
}
