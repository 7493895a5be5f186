use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn two_bus_json(p_load: f64, r: f64, v_min_sq: f64) -> String {
    format!(
        r#"{{
  "base_mva": 1.0,
  "v0_sq": 1.0,
  "v_min_sq": {v_min_sq},
  "v_max_sq": 1.21,
  "buses": [
    {{"id": 0, "p_load": 0.0, "q_load": 0.0, "pv_avail": 0.0, "inv_cap": 0.0}},
    {{"id": 1, "p_load": {p_load}, "q_load": 0.05, "pv_avail": 0.1, "inv_cap": 0.12}}
  ],
  "branches": [{{"from": 0, "to": 1, "r": {r}, "x": 0.25, "l_max_sq": 0.5}}]
}}"#
    )
}

struct Workspace {
    dir: TempDir,
    network: PathBuf,
}

impl Workspace {
    fn new(p_load: f64, r: f64, v_min_sq: f64) -> Self {
        let dir = TempDir::new().unwrap();
        let network = dir.path().join("net.json");
        std::fs::write(&network, two_bus_json(p_load, r, v_min_sq)).unwrap();
        Self { dir, network }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_derdispatch"))
            .arg("--network")
            .arg(&self.network)
            .args(args)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn check_reports_feasible_dispatch() {
    let ws = Workspace::new(0.1, 0.3, 0.81);
    let out = ws.run(&[
        "check",
        "--scenario",
        "0.1,0.05,0.1",
        "--dispatch",
        "0.05,0.0",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["feasible"], true);
}

#[test]
fn check_rejects_infeasible_dispatch() {
    let ws = Workspace::new(0.1, 0.3, 0.81);
    // more PV than is available
    let out = ws.run(&[
        "check",
        "--scenario",
        "0.1,0.05,0.1",
        "--dispatch",
        "0.5,0.0",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn wrong_dimension_is_an_input_error() {
    let ws = Workspace::new(0.1, 0.3, 0.81);
    let out = ws.run(&["check", "--scenario", "0.1,0.05", "--dispatch", "0.05,0.0"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unknown_config_key_is_an_input_error() {
    let ws = Workspace::new(0.1, 0.3, 0.81);
    let cfg = ws.path("run.toml");
    std::fs::write(&cfg, "not_a_key = 1\n").unwrap();
    let out = ws.run(&[
        "--config",
        p(&cfg),
        "check",
        "--scenario",
        "0.1,0.05,0.1",
        "--dispatch",
        "0,0",
    ]);
    assert_ne!(code(&out), 0);
}

#[test]
fn collapsed_power_flow_is_an_infeasible_dispatch() {
    let ws = Workspace::new(0.1, 0.3, 0.81);
    let out = ws.run(&["check", "--scenario", "50.0,20.0,0.1", "--dispatch", "0,0"]);
    assert_eq!(code(&out), 2);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["diverged"].is_string());
}

#[test]
fn fit_ip_on_collapsing_feeder_is_a_convergence_failure() {
    let ws = Workspace::new(0.4, 0.6, 0.81);
    let out = ws.run(&[
        "fit-ip",
        "--out",
        p(&ws.path("rule.json")),
        "--verify",
        "10",
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn fit_ip_without_interior_point_is_a_certificate_failure() {
    // at peak load no dispatch lifts the voltage to this floor
    let ws = Workspace::new(0.2, 0.3, 0.999);
    let out = ws.run(&[
        "fit-ip",
        "--out",
        p(&ws.path("rule.json")),
        "--verify",
        "10",
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn full_pipeline_on_two_bus() {
    let ws = Workspace::new(0.1, 0.3, 0.81);
    let rule = ws.path("rule.json");
    let data = ws.path("data.csv");
    let models = ws.path("models");
    let bench = ws.path("bench");

    let out = ws.run(&["fit-ip", "--out", p(&rule), "--verify", "50"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 failures"));

    let out = ws.run(&[
        "gen-data",
        "--out",
        p(&data),
        "--count",
        "35",
        "--rule",
        p(&rule),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let out = ws.run(&[
        "train",
        "--data",
        p(&data),
        "--out-dir",
        p(&models),
        "--pretrain-epochs",
        "5",
        "--penalty-epochs",
        "3",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["vnn.json", "pnn.json", "train_log.csv", "train_config.json"] {
        assert!(models.join(f).exists(), "{f} missing");
    }

    let out = ws.run(&[
        "bench",
        "--data",
        p(&data),
        "--vnn",
        p(&models.join("vnn.json")),
        "--pnn",
        p(&models.join("pnn.json")),
        "--rule",
        p(&rule),
        "--out-dir",
        p(&bench),
        "--solver-baseline",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(bench.join("summary.json")).unwrap())
            .unwrap();
    let methods = summary["methods"].as_array().unwrap();
    let bnn = methods.iter().find(|m| m["method"] == "B-NN").unwrap();
    assert_eq!(bnn["feasible_pct"], 100.0);
    let rows = std::fs::read_to_string(bench.join("samples.csv")).unwrap();
    assert!(rows.lines().count() > 1);
    assert!(bench.join("report.csv").exists());

    let out = ws.run(&[
        "project",
        "--rule",
        p(&rule),
        "--scenario",
        "0.1,0.05,0.1",
        "--dispatch",
        "0.1,0.12",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let proj: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let kappa = proj["kappa"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&kappa));

    // a model trained on another feeder is refused
    let other = ws.path("other.json");
    std::fs::write(&other, two_bus_json(0.1, 0.31, 0.81)).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_derdispatch"))
        .args(["--network", p(&other), "bench", "--data", p(&data)])
        .args([
            "--vnn",
            p(&models.join("vnn.json")),
            "--pnn",
            p(&models.join("pnn.json")),
        ])
        .args(["--rule", p(&rule), "--out-dir", p(&bench)])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}
