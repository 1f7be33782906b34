use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbf-hqp")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn check_planar_model_matches_closed_form() {
    let model = root().join("models/planar2.cfg");
    let out = cli(&["check", model.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("closed-form: pass"), "{text}");
    assert!(text.contains("spd: pass"));
}

#[test]
fn check_panda_model_passes() {
    let model = root().join("models/panda.cfg");
    let out = cli(&["check", model.to_str().unwrap(), "--states", "10"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(!stdout(&out).contains("closed-form"));
}

#[test]
fn check_rejects_asymmetric_inertia() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(root().join("models/planar2.cfg"))
        .unwrap()
        .replacen("[[0.001, 0.0, 0.0]", "[[0.001, 0.5, 0.0]", 1);
    let path = dir.path().join("bad.cfg");
    fs::write(&path, text).unwrap();
    let out = cli(&["check", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("spd: FAIL"), "{text}");
}

#[test]
fn check_missing_model_is_usage_error() {
    let out = cli(&["check", "/nonexistent/model.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/model.cfg"));
}

#[test]
fn run_writes_one_log_per_mode_and_gain() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = root().join("experiments/step.cfg");
    let out = Command::new(env!("CARGO_BIN_EXE_cbf-hqp"))
        .args([
            "run",
            "--scenario",
            scenario.to_str().unwrap(),
            "--mode",
            "single_qp,hqp_performance",
            "--gamma",
            "1,5",
            "--duration",
            "0.05",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .env("CBF_HQP_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let mut names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "step_hqp_performance_gamma1.csv",
            "step_hqp_performance_gamma5.csv",
            "step_single_qp_gamma1.csv",
            "step_single_qp_gamma5.csv",
        ]
    );
    let text = stdout(&out);
    assert!(text.contains("max K-Kmax"));
    assert_eq!(text.lines().count(), 5);
    let log = fs::read_to_string(dir.path().join("step_single_qp_gamma1.csv")).unwrap();
    assert_eq!(log.lines().count(), 51);
}

#[test]
fn run_kmax_override_reaches_log() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = root().join("experiments/sine.cfg");
    let out = cli(&[
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--kmax",
        "0.75",
        "--duration",
        "0.01",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let log = fs::read_to_string(dir.path().join("sine_hqp_safety_gamma5.csv")).unwrap();
    let header: Vec<&str> = log.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|&h| h == "K_max").unwrap();
    let value: f64 = log.lines().nth(1).unwrap().split(',').nth(col).unwrap().parse().unwrap();
    assert_eq!(value, 0.75);
}

#[test]
fn run_rejects_unknown_mode() {
    let scenario = root().join("experiments/step.cfg");
    let out = cli(&["run", "--scenario", scenario.to_str().unwrap(), "--mode", "fastest"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("fastest"));
}

#[test]
fn run_missing_scenario_names_path() {
    let out = cli(&["run", "--scenario", "/nonexistent/scenario.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/scenario.cfg"));
}

#[test]
fn run_rejects_nonpositive_kmax() {
    let scenario = root().join("experiments/step.cfg");
    let out = cli(&["run", "--scenario", scenario.to_str().unwrap(), "--kmax", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_subcommand_is_usage_error() {
    assert_eq!(cli(&[]).status.code(), Some(2));
}
