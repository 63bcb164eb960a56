//! The `gpcal` binary: subcommands, output files and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gpcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpcal")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn fk_prints_pose() {
    let o = gpcal(&["fk", "--robot", "planar2", "--", "0", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row.len(), 7);
    assert!((row[0] - 1.0).abs() < 1e-12);
    assert!((row[4] - 2.0).abs() < 1e-12);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "robot = \"planar2\"\nstrategies = [\"gp-ucb\"]\nbudget = 0\nseeds = [0]\n").unwrap();
    let o = gpcal(&["calibrate", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("budget"));

    let o = gpcal(&["calibrate", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = gpcal(&["fk", "--robot", "planar2", "--", "0.1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = gpcal(&["fk", "--robot", "puma", "--", "0.1"]);
    assert_eq!(o.status.code(), Some(1));
}

fn calibrate_into(out: &Path) -> Output {
    gpcal(&[
        "calibrate",
        "--robot",
        "planar2",
        "--seed",
        "3",
        "--budget",
        "12",
        "--strategy",
        "ei",
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn calibrate_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(calibrate_into(a.path()).status.success());
    assert!(calibrate_into(b.path()).status.success());
    for file in ["curves/ei_seed3.csv", "holdout/ei_seed3.csv", "runs/ei_seed3.json"] {
        let x = fs::read(a.path().join(file)).unwrap();
        let y = fs::read(b.path().join(file)).unwrap();
        assert_eq!(x, y, "{file}");
    }
    let curve = fs::read_to_string(a.path().join("curves/ei_seed3.csv")).unwrap();
    assert_eq!(curve.lines().count(), 13);
}

#[test]
fn fit_gp_from_residual_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("residuals.csv");
    let mut text = String::from("q1,q2,r_qw,r_qx,r_qy,r_qz,r_px,r_py,r_pz\n");
    for k in 0..20 {
        let (q1, q2) = (-3.0 + 0.3 * k as f64, 2.0 - 0.2 * k as f64);
        text += &format!("{q1},{q2},0,0,0,0,{},{},0\n", 0.01 * q1.cos(), 0.01 * q2.sin());
    }
    fs::write(&csv, text).unwrap();
    let out = dir.path().join("out");
    let o = gpcal(&["fit-gp", "--robot", "planar2", "--out", out.to_str().unwrap(), csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("fitted 20 observations"));
    let model: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("gp_model.json")).unwrap()).unwrap();
    assert_eq!(model["axes"].as_array().unwrap().len(), 7);

    fs::write(&csv, "q1,q2,r_qw\n0,0,0\n").unwrap();
    let o = gpcal(&["fit-gp", "--robot", "planar2", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn histogram_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = gpcal(&[
        "histogram",
        "--robot",
        "lander6",
        "--samples",
        "200",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("histogram.csv")).unwrap();
    assert!(text.starts_with("axis,bin_lo,bin_hi,count"));
    assert!(dir.path().join("histogram_moments.csv").exists());
}
