use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fttm::io::read_dataset;
use fttm::simulate::{gen_scenario, replication_seed, Scenario, ScenarioConfig};
use serde_json::Value;
use tempfile::TempDir;

const SEED: u64 = 42;
const N: usize = 150;

fn fttm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fttm"))
        .args(args)
        .env("FTTM_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes replication 0 of A1 into `dir/data`.
fn simulated_files(dir: &TempDir) -> (PathBuf, PathBuf) {
    let data = dir.path().join("data");
    let n = N.to_string();
    let seed = SEED.to_string();
    let out = fttm(&[
        "simulate", "--scenario", "a1", "--n", &n, "--reps", "2", "--seed", &seed, "--n0", "4", "--n1", "2",
        "--dataset-out", s(&data), "--out", s(&dir.path().join("report.json")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    (data.join("survival.csv"), data.join("functional.csv"))
}

fn data_args<'a>(files: &'a (PathBuf, PathBuf)) -> [&'a str; 4] {
    ["--survival", s(&files.0), "--functional", s(&files.1)]
}

fn fit_fixed(dir: &TempDir, files: &(PathBuf, PathBuf)) -> PathBuf {
    let out = dir.path().join("fit");
    let mut args = vec!["fit"];
    args.extend(data_args(files));
    args.extend(["--n0", "13", "--n1", "3", "--r", "0", "--out", s(&out)]);
    let res = fttm(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stdout));
    out
}

#[test]
fn simulated_files_reread_to_the_generated_dataset() {
    let dir = TempDir::new().unwrap();
    let files = simulated_files(&dir);
    let reread = read_dataset(&files.0, &files.1).unwrap();
    let original = gen_scenario(&ScenarioConfig::new(Scenario::A1, N, replication_seed(SEED, 0))).unwrap();
    assert_eq!(reread, original.dataset);
}

#[test]
fn fit_writes_converged_report_and_curves() {
    let dir = TempDir::new().unwrap();
    let files = simulated_files(&dir);
    let out = fit_fixed(&dir, &files);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["fit"]["converged"], true);
    assert_eq!(doc["fit"]["spec"]["n0"], 13);
    assert_eq!(doc["scalar_intervals"].as_array().unwrap().len(), 2);
    let beta = std::fs::read_to_string(out.join("beta_s.csv")).unwrap();
    assert_eq!(beta.lines().next().unwrap(), "s,est,se,lo,hi");
    assert_eq!(beta.lines().count(), 102);
    assert!(!beta.contains('\r'));
    let h = std::fs::read_to_string(out.join("h_curve.csv")).unwrap();
    assert_eq!(h.lines().next().unwrap(), "t,est,se,lo,hi");
    assert!(!out.join("aic_table.csv").exists());
}

#[test]
fn grid_fit_writes_one_aic_row_per_cell() {
    let dir = TempDir::new().unwrap();
    let files = simulated_files(&dir);
    let out = dir.path().join("grid");
    let mut args = vec!["fit"];
    args.extend(data_args(&files));
    args.extend(["--grid-n0", "4,7,10,13", "--grid-n1", "3,5,7,9", "--grid-r", "0,1", "--out", s(&out)]);
    let res = fttm(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stdout));
    let table = std::fs::read_to_string(out.join("aic_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 33);
    assert_eq!(stdout_json(&res)["status"], "ok");
}

#[test]
fn missing_column_is_reported_as_json() {
    let dir = TempDir::new().unwrap();
    let files = simulated_files(&dir);
    let text = std::fs::read_to_string(&files.0).unwrap().replacen("id,time,", "id,t,", 1);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, text).unwrap();
    let res = fttm(&["fit", "--survival", s(&bad), "--functional", s(&files.1), "--out", s(dir.path())]);
    assert_eq!(res.status.code(), Some(1));
    let doc = stdout_json(&res);
    assert_eq!(doc["status"], "error");
    assert_eq!(doc["kind"], "missing_column");
    assert!(doc["message"].as_str().unwrap().contains("time"));
}

#[test]
fn usage_errors_exit_with_code_two() {
    assert_eq!(fttm(&["fit", "--bogus"]).status.code(), Some(2));
    assert_eq!(fttm(&["simulate", "--scenario", "a1"]).status.code(), Some(2));
    assert_eq!(fttm(&["cv", "--survival", "a", "--functional", "b", "--k", "3"]).status.code(), Some(2));
}

#[test]
fn gof_and_predict_use_the_saved_fit() {
    let dir = TempDir::new().unwrap();
    let files = simulated_files(&dir);
    let fit = fit_fixed(&dir, &files).join("fit.json");
    let gof = dir.path().join("gof.csv");
    let mut args = vec!["gof", "--fit", s(&fit)];
    args.extend(data_args(&files));
    args.extend(["--out", s(&gof)]);
    let res = fttm(&args);
    assert!(res.status.success());
    assert!(stdout_json(&res)["deviation"]["mean_abs"].as_f64().unwrap() < 0.2);
    let text = std::fs::read_to_string(&gof).unwrap();
    assert_eq!(text.lines().next().unwrap(), "u,lambda_hat,lo,hi,identity");
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[0], f[4]);
    }

    let pred = dir.path().join("pred.csv");
    let mut args = vec!["predict", "--fit", s(&fit)];
    args.extend(data_args(&files));
    args.extend(["--out", s(&pred), "--times", "0.5,1,2"]);
    assert!(fttm(&args).status.success());
    let text = std::fs::read_to_string(&pred).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0].split(',').count(), N + 1);
    assert!(lines[0].starts_with("t,S_hat_1,"));
    let first: Vec<f64> = lines.iter().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(first.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn cv_reports_every_fold() {
    let dir = TempDir::new().unwrap();
    let files = simulated_files(&dir);
    let mut args = vec!["cv"];
    args.extend(data_args(&files));
    args.extend(["--n0", "5", "--n1", "2", "--k", "10", "--seed", "7"]);
    let res = fttm(&args);
    assert!(res.status.success());
    let doc = stdout_json(&res);
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["folds"].as_array().unwrap().len(), 10);
    assert_eq!(stdout_json(&fttm(&args)), doc);
}

#[test]
fn config_file_fills_unset_flags() {
    let dir = TempDir::new().unwrap();
    let files = simulated_files(&dir);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"n0": 5, "n1": 2, "max_iters": 400}"#).unwrap();
    let out = dir.path().join("fit");
    let mut args = vec!["--config", s(&cfg), "fit"];
    args.extend(data_args(&files));
    args.extend(["--n1", "3", "--out", s(&out), "--no-inference"]);
    let res = fttm(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stdout));
    let doc = stdout_json(&res);
    assert_eq!(doc["n0"], 5);
    assert_eq!(doc["n1"], 3);
    let beta = std::fs::read_to_string(out.join("beta_s.csv")).unwrap();
    assert!(beta.lines().nth(1).unwrap().ends_with(",NaN,NaN,NaN"));

    std::fs::write(&cfg, r#"{"n_zero": 5}"#).unwrap();
    let res = fttm(&args);
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(stdout_json(&res)["kind"], "config");
}

#[test]
fn simulate_is_reproducible_from_the_seed() {
    let run = || fttm(&["simulate", "--scenario", "a2", "--n", "100", "--reps", "3", "--seed", "5", "--n0", "4", "--n1", "2"]);
    let a = run();
    let b = run();
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stdout));
    assert_eq!(a.stdout, b.stdout);
    let doc = stdout_json(&a);
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["reps"], 3);
    assert_eq!(doc["replications"].as_array().unwrap().len(), 3);
}

#[test]
fn validate_flags_data_without_events() {
    let dir = TempDir::new().unwrap();
    let files = simulated_files(&dir);
    let res = fttm(&["validate", "--survival", s(&files.0), "--functional", s(&files.1)]);
    assert!(res.status.success());
    assert_eq!(stdout_json(&res)["findings"].as_array().unwrap().len(), 0);

    let text = std::fs::read_to_string(&files.0).unwrap();
    let censored: String = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                format!("{l}\n")
            } else {
                let mut f: Vec<&str> = l.split(',').collect();
                f[2] = "0";
                format!("{}\n", f.join(","))
            }
        })
        .collect();
    let bad = dir.path().join("censored.csv");
    std::fs::write(&bad, censored).unwrap();
    let res = fttm(&["validate", "--survival", s(&bad), "--functional", s(&files.1)]);
    assert_eq!(res.status.code(), Some(1));
    let doc = stdout_json(&res);
    assert!(doc["findings"].as_array().unwrap().iter().any(|f| f["code"] == "no_events"));
}

#[test]
fn zero_threads_is_rejected() {
    let res = fttm(&["--threads", "0", "validate", "--survival", "x", "--functional", "y"]);
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(stdout_json(&res)["kind"], "usage");
}
