use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;
use wsteer::solution::SolutionFile;

fn wsteer(args: &[&Path]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsteer")).args(args).output().unwrap()
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn edited(dir: &TempDir, name: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(config(name)).unwrap()).unwrap();
    edit(&mut v);
    let path = dir.path().join(format!("edited_{name}"));
    std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn solve_to(dir: &TempDir, cfg: &Path, name: &str) -> PathBuf {
    let out = dir.path().join(name);
    let o = wsteer(&[Path::new("solve"), cfg, Path::new("-o"), &out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    out
}

#[test]
fn solve_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = config("double_integrator_sd1.json");
    let a = std::fs::read(solve_to(&dir, &cfg, "a.json")).unwrap();
    let b = std::fs::read(solve_to(&dir, &cfg, "b.json")).unwrap();
    assert_eq!(a, b);
    let v: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["converged"], json!(true));
    assert_eq!(v["theta"].as_array().unwrap().len(), 10);
}

#[test]
fn solution_file_roundtrips() {
    let dir = TempDir::new().unwrap();
    let path = solve_to(&dir, &config("double_integrator_sd2.json"), "s.json");
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(SolutionFile::load(&path).unwrap().to_json(), text);
}

#[test]
fn invalid_initial_covariance_is_named() {
    let dir = TempDir::new().unwrap();
    let cfg = edited(&dir, "double_integrator_sd1.json", |v| v["S0"] = json!([[1.0, 0.0], [0.0, -1.0]]));
    let o = wsteer(&[Path::new("solve"), &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("S0"), "{}", stderr(&o));
}

#[test]
fn unknown_fields_are_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = edited(&dir, "double_integrator_sd1.json", |v| v["horizn"] = json!(3));
    let o = wsteer(&[Path::new("solve"), &cfg]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn scan_of_identical_configs_is_flat() {
    let cfg = config("double_integrator_sd2.json");
    let o = wsteer(&[Path::new("scan"), &cfg, &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("gamma,J,J1,J2,J3,J4"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 401);
    assert_eq!(rows[0][0], -0.5);
    assert_eq!(rows[400][0], 1.5);
    assert!(rows.iter().any(|r| r[0] == 0.0) && rows.iter().any(|r| r[0] == 1.0));
    let j0 = rows[0][1];
    assert!(rows.iter().all(|r| (r[1] - j0).abs() <= 1e-12 * j0.abs()));
}

#[test]
fn scan_sweep_adds_lambda_column() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("scan.csv");
    let (a, b) = (config("double_integrator_sd1.json"), config("double_integrator_sd2.json"));
    let o = Command::new(env!("CARGO_BIN_EXE_wsteer"))
        .args([Path::new("scan"), &a, &b, Path::new("--points"), Path::new("11")])
        .args(["--lambda-sweep", "1,10", "-o"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.starts_with("lambda,gamma,J,J1,J2,J3,J4\n"));
    assert_eq!(text.lines().count(), 1 + 22);
}

#[test]
fn check_passes_and_accepts_zero_lambda() {
    let o = wsteer(&[Path::new("check"), &config("double_integrator_sd2.json")]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(!stdout(&o).contains("FAIL"));

    let dir = TempDir::new().unwrap();
    let cfg = edited(&dir, "double_integrator_sd2.json", |v| v["lambda"] = json!(0.0));
    let o = wsteer(&[Path::new("check"), &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
}

#[test]
fn simulate_within_band_and_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = config("double_integrator_sd1.json");
    let sol = solve_to(&dir, &cfg, "s.json");
    let run = |threads: &str, json: &Path| {
        Command::new(env!("CARGO_BIN_EXE_wsteer"))
            .env("WSTEER_THREADS", threads)
            .args([Path::new("simulate"), &cfg, &sol, Path::new("--samples"), Path::new("20000"), Path::new("--json"), json])
            .output()
            .unwrap()
    };
    let (ja, jb) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let a = run("1", &ja);
    let b = run("4", &jb);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(b.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(std::fs::read(ja).unwrap(), std::fs::read(&jb).unwrap());
    let v: Value = serde_json::from_slice(&std::fs::read(jb).unwrap()).unwrap();
    assert_eq!(v["within_band"], json!(true));
    assert_eq!(v["samples"], json!(20000));
}

#[test]
fn simulate_rejects_single_sample() {
    let dir = TempDir::new().unwrap();
    let cfg = config("double_integrator_sd2.json");
    let sol = solve_to(&dir, &cfg, "s.json");
    let o = wsteer(&[Path::new("simulate"), &cfg, &sol, Path::new("--samples"), Path::new("1")]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_rejects_mismatched_solution() {
    let dir = TempDir::new().unwrap();
    let sol = solve_to(&dir, &config("double_integrator_sd2.json"), "s.json");
    let short = edited(&dir, "double_integrator_sd2.json", |v| v["horizon"] = json!(5));
    let o = wsteer(&[Path::new("simulate"), &short, &sol]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("does not match"), "{}", stderr(&o));
}

#[test]
fn unconverged_solve_exits_two() {
    let dir = TempDir::new().unwrap();
    let cfg = edited(&dir, "double_integrator_sd1.json", |v| v["solver"]["max_ccp_iters"] = json!(1));
    let out = dir.path().join("s.json");
    let o = wsteer(&[Path::new("solve"), &cfg, Path::new("-o"), &out]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["converged"], json!(false));
    assert_eq!(v["trace"]["termination"], json!("max_iters"));
}
