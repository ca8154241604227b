use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "system": {"n": 3, "rho_target": 0.6, "opnorm_target": 1.0, "seed": 1},
  "noise": {"kind": "gaussian", "sigma_w": 1.0},
  "attack": {"kind": "fixed_offset", "mu": 40.0, "p": 0.3},
  "t_grid": [150, 300],
  "seeds": 3,
  "estimators": ["ls", "l1", "two_stage"],
  "filter": {"filter_mode": {"rule": "ranking", "q1": 0.9, "q2": 0.5, "mode": {"kind": "quantile"}}}
}"#;

fn sysid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sysid")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_then_fit_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let traj = out.join("trajectory.json");
    let traj_s = traj.to_str().unwrap();

    assert!(sysid(&["simulate", "--config", &cfg, "--t", "200", "--seed", "9", "--out", out_s]).status.success());
    assert!(out.join("trajectory.csv").exists());
    for est in ["ls", "l2", "l1"] {
        let o = sysid(&["estimate", "--config", &cfg, "--input", traj_s, "--estimator", est]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["per_row_error"].as_array().unwrap().len(), 3);
    }
    assert!(sysid(&["filter", "--config", &cfg, "--input", traj_s, "--out", out_s]).status.success());
    let bitmap = fs::read_to_string(out.join("retained.csv")).unwrap();
    assert!(bitmap.starts_with("t,node0,node1,node2"));
    assert_eq!(bitmap.lines().count(), 201);
    let o = sysid(&["two-stage", "--config", &cfg, "--input", traj_s]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["stage2_error"]["opnorm_err"].as_f64().unwrap().is_finite());
}

#[test]
fn gen_system_respects_seed_flag() {
    let a = sysid(&["gen-system", "--seed", "3"]);
    let b = sysid(&["gen-system", "--seed", "3"]);
    let c = sysid(&["gen-system", "--seed", "4"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["n"], 10);
    assert!((v["rho"].as_f64().unwrap() - 0.75).abs() < 1e-6);
}

#[test]
fn experiment_outputs_and_thread_independence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let one = dir.path().join("one");
    let four = dir.path().join("four");
    for (out, threads) in [(&one, "1"), (&four, "4")] {
        let o = sysid(&["experiment", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["rows.csv", "aggregates.csv", "timings.csv", "config.json", "report.json"] {
        assert!(one.join(f).exists(), "{f} missing");
    }
    assert!(!one.join("rows.partial.csv").exists());
    let rows = fs::read(one.join("rows.csv")).unwrap();
    assert_eq!(rows, fs::read(four.join("rows.csv")).unwrap());
    assert_eq!(String::from_utf8(rows).unwrap().lines().count(), 1 + 2 * 3 * 3);

    let plots = dir.path().join("plots");
    let o = sysid(&["plot-data", "--input", one.join("report.json").to_str().unwrap(), "--out", plots.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = fs::read_to_string(plots.join("error_vs_t.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,estimator,median_err,q25,q75");
    assert!(fs::read_to_string(plots.join("error_vs_t.gp")).unwrap().contains("logscale"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sysid(&["experiment", "--preset", "no_such_preset"]).status.code(), Some(2));
    let bad = write_config(dir.path(), r#"{"t_grid": [100, 50]}"#);
    assert_eq!(sysid(&["experiment", "--config", &bad]).status.code(), Some(2));
    let garbage = write_config(dir.path(), "not json");
    assert_eq!(sysid(&["gen-system", "--config", &garbage]).status.code(), Some(2));
    assert_eq!(sysid(&["estimate", "--input", "/nonexistent/trajectory.json"]).status.code(), Some(2));
    assert_eq!(sysid(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"preset": "custom", "attack": {"kind": "scaled_state", "c": 30.0, "p": 0.4}}"#,
    );
    let o = sysid(&["simulate", "--config", &cfg, "--t", "4000"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn residual_scatter_requires_visualization_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("exp");
    assert!(sysid(&["experiment", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let o = sysid(&["plot-data", "--input", out.join("report.json").to_str().unwrap(), "--kind", "residual-scatter", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("residual_scatter.csv").exists());
}
