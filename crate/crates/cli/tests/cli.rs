use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omas-topo")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    let out = dir.path().join("out");
    assert!(bin(&["gen-scenario", "--preset", "paper", "--seed", "3", "--out", p(&scenario)]).status.success());
    let res = bin(&["run", "--scenario", p(&scenario), "--out", p(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for f in [
        "scenario.json",
        "segments.jsonl",
        "distances_0.csv",
        "distances_1.csv",
        "dendrogram_0.json",
        "dendrogram_1.json",
        "labels.csv",
        "estimates.json",
        "report.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let report = json(&out.join("report.json"));
    let errors = report["per_mode_errors"].as_object().unwrap();
    assert_eq!(errors.len(), 5);
    assert!(errors.values().all(|e| e.as_f64().unwrap() <= 1e-6));
    let labels = std::fs::read_to_string(out.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().next(), Some("interval_index,group_id,label"));
    assert_eq!(labels.lines().count(), 21);
}

#[test]
fn staged_commands_match_run() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.json");
    let (sim, cl, est, run) = (dir.path().join("sim"), dir.path().join("cl"), dir.path().join("est"), dir.path().join("run"));
    assert!(bin(&["gen-scenario", "--preset", "paper", "--seed", "1", "--out", p(&scenario)]).status.success());
    assert!(bin(&["simulate", "--scenario", p(&scenario), "--out", p(&sim)]).status.success());
    assert!(bin(&["cluster", "--segments", p(&sim), "--out", p(&cl)]).status.success());
    let res = bin(&["estimate", "--segments", p(&sim), "--labels", p(&cl.join("labels.csv")), "--out", p(&est)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(bin(&["run", "--scenario", p(&scenario), "--out", p(&run)]).status.success());

    let read = |path: &Path| std::fs::read(path).unwrap();
    assert_eq!(read(&sim.join("segments.jsonl")), read(&run.join("segments.jsonl")));
    assert_eq!(read(&cl.join("labels.csv")), read(&run.join("labels.csv")));
    assert_eq!(read(&est.join("estimates.json")), read(&run.join("estimates.json")));
}

#[test]
fn trajectory_log_is_optional() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.json");
    let sim = dir.path().join("sim");
    assert!(bin(&["gen-scenario", "--preset", "short-dwell", "--out", p(&scenario)]).status.success());
    assert!(bin(&["simulate", "--scenario", p(&scenario), "--out", p(&sim)]).status.success());
    assert!(!sim.join("trajectory.csv").exists());
    let res = bin(&["simulate", "--scenario", p(&scenario), "--out", p(&sim), "--log-trajectory", "--log-stride", "500"]);
    assert!(res.status.success());
    let log = std::fs::read_to_string(sim.join("trajectory.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("time,node_id,x,x_hat,w"));
    assert!(log.lines().count() > 100);
}

#[test]
fn invalid_scenarios_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    assert!(bin(&["gen-scenario", "--preset", "short-dwell", "--out", p(&good)]).status.success());
    let base = json(&good);

    let mut negative = base.clone();
    negative["gamma"] = serde_json::json!(-1.0);
    let mut missing = base.clone();
    missing.as_object_mut().unwrap().remove("gamma");
    let mut dangling = base;
    dangling["schedule"]["mode_sequence"][3] = serde_json::json!(9);

    for (name, doc) in [("negative", negative), ("missing", missing), ("dangling", dangling)] {
        let path = dir.path().join(format!("{name}.json"));
        std::fs::write(&path, doc.to_string()).unwrap();
        let res = bin(&["run", "--scenario", p(&path), "--out", p(&dir.path().join(name))]);
        assert_eq!(res.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&res.stderr));
    }
    let missing_err = bin(&["run", "--scenario", p(&dir.path().join("missing.json")), "--out", p(dir.path())]);
    assert!(String::from_utf8_lossy(&missing_err.stderr).contains("gamma"));
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("div.json");
    let doc = serde_json::json!({
        "modes": [{"id": 1, "nodes": [1], "L": [[40.0]]}],
        "schedule": {"switch_times": [0.0], "mode_sequence": [1], "horizon": 20.0},
        "excitation": {},
        "dynamics_f": {"kind": "zero"},
        "initial_states": {"1": 1.0},
        "filter_gain": 0.05,
        "gamma": 0.1,
        "step": 0.001,
        "mode_counts": [{"nodes": [1], "count": 1}],
        "seed": 1
    });
    std::fs::write(&path, doc.to_string()).unwrap();
    let res = bin(&["run", "--scenario", p(&path), "--out", p(&dir.path().join("o"))]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("interval 0"));
}
