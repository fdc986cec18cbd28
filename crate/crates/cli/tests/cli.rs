use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_robust-alloc"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn path_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SINGLE_AGENT: &str = r#"{
  "format_version": 1,
  "n": 1,
  "m": 1,
  "q": 2,
  "gamma": [0],
  "agents": [
    {
      "A": [[1.0, 1.0]],
      "Ahat": [[0.0, 0.0]],
      "b": [[100.0, 100.0]],
      "set": { "type": "whole_space" },
      "objective": { "type": "quadratic", "p": [2.0, -1.0] },
      "x0": [0.0, 0.0]
    }
  ],
  "graph": { "adjacency": [[0.0]] }
}"#;

#[test]
fn dump_demo_is_stable_and_reloads() {
    let first = run(&["dump-demo"]);
    let second = run(&["dump-demo"]);
    assert!(first.status.success());
    assert_eq!(first.stdout, second.stdout);

    let doc: Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(doc["n"], 4);
    assert_eq!(doc["gamma"], serde_json::json!([2, 2]));
    assert_eq!(doc["agents"][0]["b"][0], serde_json::json!([-15.0, -5.0]));

    // a dumped file must be accepted as a problem and reproduce the builtin run
    let dir = TempDir::new().unwrap();
    let file = dir.path().join("demo.json");
    std::fs::write(&file, &first.stdout).unwrap();
    let from_file = run(&["oracle", "--problem", path_arg(&file)]);
    let builtin = run(&["oracle", "--problem", "builtin:paper-demo"]);
    assert!(from_file.status.success());
    assert_eq!(from_file.stdout, builtin.stdout);
}

#[test]
fn run_writes_trajectory_summary_and_state() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "run",
        "--problem",
        "builtin:paper-demo",
        "--t-end",
        "5",
        "--record-every",
        "50",
        "--out",
        path_arg(dir.path()),
        "--dump-state",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut reader = csv::Reader::from_path(dir.path().join("trajectory.csv")).unwrap();
    let header = reader.headers().unwrap().clone();
    assert_eq!(&header[0], "t");
    assert_eq!(&header[17], "V");
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1 + 500 / 50);
    let last_t: f64 = rows.last().unwrap()[0].parse().unwrap();
    assert!((last_t - 5.0).abs() < 1e-9);
    // reference is the final state, so V vanishes on the last row
    assert_eq!(&rows.last().unwrap()[17], "0");

    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 500);
    assert_eq!(summary["lyapunov_reference"], "final_state");
    assert_eq!(summary["final_x"].as_array().unwrap().len(), 8);
    assert_eq!(summary["block_sup_norms"].as_array().unwrap().len(), 8);
    let x_csv: Vec<f64> = rows.last().unwrap().iter().skip(1).take(8).map(|v| v.parse().unwrap()).collect();
    let x_summary: Vec<f64> = summary["final_x"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(x_csv, x_summary);

    let state: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("final_state.json")).unwrap()).unwrap();
    assert_eq!(state["time"], 5.0);
    assert!(state["raw"].is_object());
}

#[test]
fn nonpositive_step_is_a_usage_error() {
    for dt in ["0", "-0.01"] {
        let out = run(&["run", "--problem", "builtin:paper-demo", &format!("--dt={dt}")]);
        assert_eq!(out.status.code(), Some(2), "dt {dt}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("positive"));
    }
}

#[test]
fn oracle_state_passes_check() {
    let dir = TempDir::new().unwrap();
    let oracle = run(&["oracle", "--problem", "builtin:paper-demo", "--out", path_arg(dir.path())]);
    assert!(oracle.status.success());
    let doc: Value = serde_json::from_slice(&oracle.stdout).unwrap();
    assert_eq!(doc["format_version"], 1);
    assert!(doc["x_star"].is_array());

    let check = run(&[
        "check",
        "--state",
        path_arg(&dir.path().join("oracle_state.json")),
        "--problem",
        "builtin:paper-demo",
        "--tol",
        "1e-4",
    ]);
    let text = stdout(&check);
    assert!(check.status.success(), "{text}");
    assert!(text.contains("verdict (tol 0.0001): PASS"));
}

#[test]
fn initial_state_fails_check_on_stationarity() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "run",
        "--problem",
        "builtin:paper-demo",
        "--dt",
        "0.01",
        "--t-end",
        "0.01",
        "--out",
        path_arg(dir.path()),
        "--dump-state",
    ]);
    assert!(out.status.success());
    let check = run(&[
        "check",
        "--state",
        path_arg(&dir.path().join("final_state.json")),
        "--problem",
        "builtin:paper-demo",
    ]);
    assert_eq!(check.status.code(), Some(1));
    let text = stdout(&check);
    let json_end = text.find("\n\n").unwrap();
    let report: Value = serde_json::from_str(&text[..json_end]).unwrap();
    assert!(report["kkt"]["r_a"].as_f64().unwrap() > 1.0);
    assert!(text.contains("FAIL"));
}

#[test]
fn negative_orthant_entry_is_rejected() {
    let dir = TempDir::new().unwrap();
    let oracle = run(&["oracle", "--problem", "builtin:paper-demo", "--out", path_arg(dir.path())]);
    assert!(oracle.status.success());
    let path = dir.path().join("oracle_state.json");
    let mut state: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    state["outputs"]["z"][0] = serde_json::json!(-1.0);
    std::fs::write(&path, serde_json::to_string(&state).unwrap()).unwrap();

    let check = run(&["check", "--state", path_arg(&path), "--problem", "builtin:paper-demo"]);
    assert!(!check.status.success());
    let err = String::from_utf8_lossy(&check.stderr);
    assert!(err.contains("outputs.z[0]"), "{err}");
}

#[test]
fn oracle_iteration_cap_fails() {
    let out = run(&["oracle", "--problem", "builtin:paper-demo", "--max-iter", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("did not converge"));
}

#[test]
fn single_agent_run_reaches_its_anchor() {
    let dir = TempDir::new().unwrap();
    let problem = dir.path().join("single.json");
    std::fs::write(&problem, SINGLE_AGENT).unwrap();
    let out = run(&[
        "run",
        "--problem",
        path_arg(&problem),
        "--t-end",
        "20",
        "--out",
        path_arg(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let x: Vec<f64> = summary["final_x"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((x[0] - 2.0).abs() < 1e-3 && (x[1] + 1.0).abs() < 1e-3, "{x:?}");
}

#[test]
fn malformed_problem_reports_field_path() {
    let dir = TempDir::new().unwrap();
    let problem = dir.path().join("bad.json");
    std::fs::write(&problem, SINGLE_AGENT.replace(r#""Ahat": [[0.0, 0.0]]"#, r#""Ahat": [[0.0]]"#)).unwrap();
    let out = run(&["oracle", "--problem", path_arg(&problem)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("agents[0].Ahat[0]"));
}
