use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.json")
}

fn gpsafe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpsafe")).args(args).output().expect("binary runs")
}

fn run_in(dir: &Path, cmd: &str, extra: &[&str]) -> Output {
    let config = toy_config();
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    gpsafe(&args)
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(dir: &Path) {
    let out = run_in(dir, "synth", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = gpsafe(&["synth", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read config"));
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{ "rollouts": {} }"#).unwrap();
    let out = gpsafe(&["synth", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rollout_without_artifacts_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), "rollout", &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_writes_its_artifacts_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path());
    synth(b.path());
    for name in ["certificate.json", "dataset.csv", "model.json", "iterations.json", "manifest.json"] {
        assert!(a.path().join(name).exists(), "{name} missing");
    }
    for name in ["dataset.csv", "model.json", "iterations.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name} differs");
    }
    let strip = |mut v: Value| {
        v["provenance"]["started_unix"] = Value::Null;
        v["provenance"]["finished_unix"] = Value::Null;
        v
    };
    let ca = strip(json(a.path().join("certificate.json")));
    assert_eq!(ca, strip(json(b.path().join("certificate.json"))));
    assert_eq!(ca["environment"], "toy-double-integrator");
    assert_eq!(ca["params"]["sigma"], 0.0);
    assert_eq!(ca["params"]["n"], 1.0);

    let m = json(a.path().join("manifest.json"));
    assert_eq!(m["command"], "synth");
    assert_eq!(m["success"], true);
    assert_eq!(m["config"]["synthesis"]["kernel"]["lengthscale"], 30.0);
}

#[test]
fn zero_step_rollout_writes_an_empty_trace() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = run_in(dir.path(), "rollout", &["--steps", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(dir.path().join("trace_seed0.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1);
    assert!(trace.starts_with("t,p,v,u1_ref,u1,phi,phi_next,u_f,threshold,status"));
    let s = json(dir.path().join("summary_seed0.json"));
    assert_eq!(s["steps"], 0);
    assert_eq!(json(dir.path().join("manifest.json"))["config"]["rollout"]["steps"], 0);
}

#[test]
fn rollout_reports_no_violations_on_the_toy() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = run_in(dir.path(), "rollout", &["--steps", "300"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for s in json(dir.path().join("rollout_summary.json")).as_array().unwrap() {
        let s = &s["summary"];
        assert_eq!(s["bound_violations"], 0);
        assert_eq!(s["unsafe_controls"], 0);
        assert_eq!(s["invariance_violations"], 0);
        assert_eq!(s["fallback_count"], s["fallbacks_outside_box"]);
    }
}

#[test]
fn feasibility_depends_on_the_gain() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = run_in(dir.path(), "feasibility", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta = json(dir.path().join("feasibility.json"));
    assert_eq!(meta["total_infeasible"], 0);
    assert_eq!(meta["total_samples"], 2000);

    let out = run_in(dir.path(), "feasibility", &["--k-override", "0.1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let weak = json(dir.path().join("feasibility_k0.1.json"));
    assert!(weak["total_infeasible"].as_u64().unwrap() > 0);
    let csv = fs::read_to_string(dir.path().join("feasibility_k0.1.csv")).unwrap();
    let total: u64 = csv.split([',', '\n']).filter(|c| !c.is_empty()).map(|c| c.parse::<u64>().unwrap()).sum();
    assert_eq!(Some(total), weak["total_infeasible"].as_u64());
    assert_eq!(json(dir.path().join("manifest.json"))["extra"]["k_override"], 0.1);
}

#[test]
fn validate_passes_and_fails_on_a_broken_model() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = run_in(dir.path(), "validate", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(dir.path().join("validation.json"));
    assert_eq!(report["passed"], true);
    let names: Vec<&str> = report["suites"].as_array().unwrap().iter().map(|s| s["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"variance-bound") && names.contains(&"calibration"));
    let back: gpsafe::validation::ValidationReport = serde_json::from_value(report).unwrap();
    assert!(back.passed);

    // without the scale factor the calibration suites must fail
    let model_path = dir.path().join("model.json");
    let mut model = json(&model_path);
    model["beta_f"] = 0.0.into();
    model["error_bound"] = Value::Null;
    fs::write(&model_path, model.to_string()).unwrap();
    let out = run_in(dir.path(), "validate", &[]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(dir.path().join("validation.json"))["passed"], false);
    assert_eq!(json(dir.path().join("manifest.json"))["success"], false);
}

#[test]
fn seed_override_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), "synth", &["--seed", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = json(dir.path().join("manifest.json"));
    assert_eq!(m["seed_override"], 5);
    assert_eq!(m["config"]["seed"], 5);
}
