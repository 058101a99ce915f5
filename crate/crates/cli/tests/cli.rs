//! End-to-end CLI behavior: exit codes, config diagnostics, and the
//! documented output formats.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kramers(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kramers"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const RADIAL: &str = r#"
seed = 3
epsilons = [0.1]
methods = ["sharp"]

[potential]
name = "iso-quadratic"

[domain]
name = "disk"

[boundary]
n_nodes = 64
"#;

#[test]
fn unknown_config_key_fails_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{RADIAL}\nunknown_knob = 3\n"));
    let out = kramers(&["--config", &cfg, "verify"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("unknown_knob") || stderr.contains("unknown field"),
        "diagnostic should name the bad key: {stderr}"
    );
}

#[test]
fn missing_config_file_fails_with_code_2() {
    let out = kramers(&["--config", "/nonexistent/exp.toml", "verify"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_methods_list_fails_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &RADIAL.replace("methods = [\"sharp\"]", "methods = []"),
    );
    let out = kramers(&["--config", &cfg, "predict"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("methods"));
}

#[test]
fn failed_hypothesis_exits_3_and_reports_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &RADIAL.replace("name = \"iso-quadratic\"", "name = \"double-well\""),
    );
    let out_dir = dir.path().join("out");
    let out = kramers(&[
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
        "verify",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let json = fs::read_to_string(out_dir.join("hypothesis.json")).unwrap();
    assert!(json.contains("\"passed\": false"));
    // ∂ₙf changes sign on the boundary for the double well
    let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(parsed["normal_derivative_min"].as_f64().unwrap() < 0.0);
}

#[test]
fn predict_radial_log_mean_exit_value() {
    // at ε = 0.1 the radial prediction is E = ε e^{1/(2ε)}, i.e.
    // log E = log(0.1) + 5
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), RADIAL);
    let out_dir = dir.path().join("out");
    let out = kramers(&[
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
        "predict",
    ]);
    assert_eq!(out.status.code(), Some(0), "{:?}", out);
    let csv = fs::read_to_string(out_dir.join("predictions.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert_eq!(
        header,
        "epsilon,method,log_mean_exit,mean_exit,eigenvalue,log_boundary_integral"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "0.1");
    assert_eq!(row[1], "generic-quadrature");
    let log_mean: f64 = row[2].parse().unwrap();
    assert!((log_mean - (0.1f64.ln() + 5.0)).abs() <= 1e-12);
    // manifest lists every artifact with a hash
    let manifest = fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("predictions.csv") && manifest.contains("sha256"));
}

#[test]
fn epsilon_and_seed_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), RADIAL);
    let out_dir = dir.path().join("out");
    let out = kramers(&[
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
        "--epsilon",
        "0.25,0.5",
        "--seed",
        "99",
        "predict",
    ]);
    assert!(out.status.success());
    let csv = fs::read_to_string(out_dir.join("predictions.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "header plus two temperatures");
    assert!(csv.contains("\n0.25,") && csv.contains("\n0.5,"));
    let echo = fs::read_to_string(out_dir.join("config.echo.toml")).unwrap();
    assert!(echo.contains("seed = 99"));
}

#[test]
fn compare_mc_and_pde_ratios_agree_within_ci() {
    // cross-method consistency on a coarse radial setup at ε = 0.2: the
    // MC/sharp ratio must sit inside its own CI of the PDE/sharp ratio
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
seed = 11
epsilons = [0.2]
methods = ["sharp", "mc", "pde"]

[potential]
name = "iso-quadratic"

[domain]
name = "disk"

[boundary]
n_nodes = 64

[sde]
dt = 2e-4
n_paths = 3000

[grid]
h = 0.015625
"#,
    );
    let out_dir = dir.path().join("out");
    let out = kramers(&[
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
        "compare",
    ]);
    assert!(out.status.success(), "{:?}", out);
    let csv = fs::read_to_string(out_dir.join("compare.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| -> f64 {
        let i = header.iter().position(|h| *h == name).unwrap();
        row[i].parse().unwrap()
    };
    let sharp = col("log_sharp").exp();
    let ratio_mc = col("ratio_mc_over_sharp");
    let ratio_pde = col("ratio_pde_over_sharp");
    let halfwidth = 1.96 * col("mc_std_error") / sharp;
    assert!(
        (ratio_mc - ratio_pde).abs() <= halfwidth,
        "mc/sharp = {ratio_mc}, pde/sharp = {ratio_pde}, ci halfwidth = {halfwidth}"
    );
}
