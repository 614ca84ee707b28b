use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use wasep_core::functionals::QuasiPotential;
use wasep_core::{DensityProfile, Grid, Params};

fn wasep(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wasep"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .env_remove("WASEP_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("headline is JSON")
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

/// Rows of a CSV written by the tool, after the hash line and the header.
fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    text.lines().skip(2).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn stationary_files_carry_the_manifest_hash() {
    let tmp = TempDir::new().unwrap();
    let out = wasep(&["stationary", "--E", "-2"], tmp.path());
    let head = stdout_json(&out);
    assert!((head["J"].as_f64().unwrap() + 0.748559).abs() < 1e-5);

    let text = fs::read_to_string(tmp.path().join("stationary.csv")).unwrap();
    let mut lines = text.lines();
    let m = manifest(tmp.path());
    let hash = m["manifest_hash"].as_str().unwrap();
    assert_eq!(lines.next().unwrap(), format!("# sha256:{hash}"));
    assert_eq!(lines.next().unwrap(), "u,rho_bar,phi_bar");
    assert_eq!(lines.count(), 401);
    assert_eq!(m["command"], "stationary");
    assert_eq!(m["files"][0], "stationary.csv");

    // keys are sorted at every level
    let raw = fs::read_to_string(tmp.path().join("manifest.json")).unwrap();
    let keys: Vec<&str> = raw
        .lines()
        .filter(|l| l.starts_with("  \"") && !l.starts_with("   "))
        .map(|l| l.trim().split('"').nth(1).unwrap())
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

#[test]
fn identical_runs_give_identical_files() {
    let (a, b, c) = (TempDir::new().unwrap(), TempDir::new().unwrap(), TempDir::new().unwrap());
    let args = ["simulate", "--N", "3", "--E", "-2", "--horizon", "5", "--samples", "4", "--seed", "9"];
    assert!(wasep(&args, a.path()).status.success());
    assert!(wasep(&args, b.path()).status.success());
    for f in ["trajectories.csv", "occupations.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let mut other = args.to_vec();
    other[10] = "10";
    assert!(wasep(&other, c.path()).status.success());
    assert_ne!(fs::read(a.path().join("trajectories.csv")).unwrap(), fs::read(c.path().join("trajectories.csv")).unwrap());
}

#[test]
fn flags_override_the_config_file() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.json");
    fs::write(&cfg, r#"{"E": -4, "M": 201, "rho_minus": 0.3}"#).unwrap();
    let out = tmp.path().join("out");
    let r = wasep(&["stationary", "--config", cfg.to_str().unwrap(), "--M", "101"], &out);
    stdout_json(&r);
    let m = manifest(&out);
    assert_eq!(m["config"]["M"], 101);
    assert_eq!(m["config"]["E"], -4.0);
    assert_eq!(m["config"]["rho_minus"], 0.3);
    assert_eq!(rows(&out.join("stationary.csv")).len(), 101);
}

#[test]
fn output_directory_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_wasep"))
        .args(["free-energy-asym", "--M", "51"])
        .env("WASEP_OUT_DIR", &dir)
        .output()
        .unwrap();
    stdout_json(&out);
    assert!(dir.join("manifest.json").is_file());
    assert!(dir.join("maximizer.csv").is_file());
}

#[test]
fn free_energy_of_a_profile_file() {
    let tmp = TempDir::new().unwrap();
    let profile = tmp.path().join("profile.csv");
    // rows in reverse order; the reader sorts them
    let mut text = String::from("u,rho\n");
    for i in (0..=400).rev() {
        let u = -1.0 + i as f64 / 200.0;
        text.push_str(&format!("{u},{}\n", 0.2 + 0.3 * (1.0 + u) + 0.05 * (1.0 - u * u)));
    }
    fs::write(&profile, text).unwrap();
    let out = wasep(&["free-energy", "--E", "-4", "--rho-minus", "0.2", "--rho-plus", "0.8", "--profile", profile.to_str().unwrap()], tmp.path());
    let head = stdout_json(&out);

    let p = Params::new(-4.0, 0.2, 0.8).unwrap();
    let g = Grid::new(401).unwrap();
    let rho = DensityProfile::from_fn(g, |u| 0.2 + 0.3 * (1.0 + u) + 0.05 * (1.0 - u * u)).unwrap();
    let direct = QuasiPotential::new(&p, g).unwrap().value(&rho).unwrap().value;
    let s = head["S_E"].as_f64().unwrap();
    assert!(s > 0.0 && (s - direct).abs() < 1e-12, "{s} vs {direct}");
    assert_eq!(head["params"]["E"], -4.0);
    let maxi = rows(&tmp.path().join("maximizer.csv"));
    assert_eq!(maxi.len(), 401);
    let phis: Vec<f64> = maxi.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(phis.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn phi_residual_column() {
    let tmp = TempDir::new().unwrap();
    let head = stdout_json(&wasep(&["phi", "--E", "-2", "--M", "201"], tmp.path()));
    assert!(head["residual"].as_f64().unwrap() < 1e-6);
    let table = rows(&tmp.path().join("phi.csv"));
    assert_eq!(table[0][3], "");
    for r in &table[1..200] {
        assert!(r[3].parse::<f64>().unwrap().abs() < 1e-6, "{r:?}");
    }
}

#[test]
fn reversible_simulation_matches_the_product_measure() {
    let tmp = TempDir::new().unwrap();
    let head = stdout_json(&wasep(&["simulate", "--N", "4", "--E", "E0", "--horizon", "50"], tmp.path()));
    assert_eq!(head["reversible"], true);
    assert_eq!(head["passed"], true);
    assert_eq!(head["generator"], "ChaCha8");
    assert_eq!(rows(&tmp.path().join("occupations.csv")).len(), 7);
    assert_eq!(rows(&tmp.path().join("trajectories.csv")).len(), 7 * 32);
}

#[test]
fn optimal_path_round_trips_through_path_cost() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("opt");
    let head = stdout_json(&wasep(&["optimal-path", "--E", "-2", "--M", "101", "--horizon", "2"], &a));
    let s = head["S_E"].as_f64().unwrap();
    let cost = head["path_cost"].as_f64().unwrap();
    assert!(cost >= s - 2e-3 && cost <= s + head["joining_bound"].as_f64().unwrap() + 2e-3);
    assert!(head["residuals"]["nonlocal_identity"].as_f64().unwrap() <= 1e-3);

    let b = tmp.path().join("cost");
    let path = a.join("path.csv");
    let again = stdout_json(&wasep(&["path-cost", "--E", "-2", "--path", path.to_str().unwrap()], &b));
    assert!((again["I_T"].as_f64().unwrap() - cost).abs() <= 1e-12 * cost.max(1.0));
    assert!(b.join("h.csv").is_file());
}

#[test]
fn asymmetric_sweep_table() {
    let tmp = TempDir::new().unwrap();
    let head = stdout_json(&wasep(&["asym-limit", "--E-list", "-3,-10", "--threads", "1"], tmp.path()));
    assert_eq!(head["rows"], 2);
    assert_eq!(head["failed_rows"], 0);
    let sweep = rows(&tmp.path().join("sweep.csv"));
    assert_eq!(sweep.len(), 2);
    assert_eq!(sweep[0][0], "-3.0");
    assert_eq!(sweep[0][1], "401");
    assert_eq!(rows(&tmp.path().join("maximizers.csv")).len(), 2);
}

#[test]
fn verify_a_single_criterion() {
    let tmp = TempDir::new().unwrap();
    let out = wasep(&["verify", "--criterion", "8"], tmp.path());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.starts_with("PASS criterion  8"), "{text}");
    assert_eq!(rows(&tmp.path().join("verify.csv")).len(), 1);
    assert_eq!(wasep(&["verify", "--criterion", "12"], tmp.path()).status.code(), Some(2));
}

fn error_record(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("structured error on stderr")
}

#[test]
fn validation_errors_exit_with_2() {
    let tmp = TempDir::new().unwrap();
    for args in [
        vec!["free-energy", "--E", "5"],
        vec!["phi", "--rho-minus", "0.9"],
        vec!["asym-limit", "--E-list", "-3,4"],
        vec!["simulate", "--samples", "1"],
        vec!["stationary", "--M", "2"],
        vec!["path-cost"],
    ] {
        let out = wasep(&args, tmp.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let rec = error_record(&out);
        assert_eq!(rec["error"]["kind"], "validation", "{args:?}");
        assert_eq!(rec["error"]["exit_code"], 2);
    }
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"E": -2, "bogus": 1}"#).unwrap();
    assert_eq!(wasep(&["stationary", "--config", cfg.to_str().unwrap()], tmp.path()).status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_3() {
    let tmp = TempDir::new().unwrap();
    // far too coarse a grid for the boundary layer at this field
    let out = wasep(&["phi", "--E", "-1e6", "--M", "51"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    let rec = error_record(&out);
    assert_eq!(rec["error"]["kind"], "numerical");
    assert!(tmp.path().join("error.json").is_file());
}
