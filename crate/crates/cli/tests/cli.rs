//! End-to-end runs of the `twofold` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use tempfile::TempDir;

const BUDGET: Duration = Duration::from_secs(60);

fn twofold(dir: &Path, args: &[&str]) -> Output {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_twofold"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        start.elapsed() < BUDGET,
        "{args:?} took {:?}",
        start.elapsed()
    );
    out
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    fs::write(dir.join(name), json).unwrap();
    name.to_string()
}

/// CSV rows after the banner and the header.
fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(
        lines.next().unwrap().starts_with("# twofold "),
        "{}",
        path.display()
    );
    lines
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn field(row: &[String], k: usize) -> f64 {
    row[k].parse().unwrap()
}

#[test]
fn predict_reports_two_crossing_solutions() {
    let tmp = TempDir::new().unwrap();
    let out = twofold(tmp.path(), &["predict", "--out", "p"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = rows(&tmp.path().join("p/predictions.csv"));
    assert_eq!(r.len(), 2);
    for (row, theta) in r.iter().zip([1.0, 3.0]) {
        assert!((field(row, 1) - theta).abs() < 1e-8);
        assert!((field(row, 2) - 0.183503).abs() < 1e-6);
        assert_eq!(row[4], "CrossingAnnulus");
    }
}

#[test]
fn verify_finds_a_sliding_cycle() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "v.json",
        r#"{"params": {"alpha": 1, "lambda": -1.5, "sigma": 3, "epsilons": [0.05]}}"#,
    );
    let out = twofold(tmp.path(), &["verify", "--config", &cfg, "--out", "v"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = rows(&tmp.path().join("v/sliding_cycles.csv"));
    let first = r
        .iter()
        .find(|row| row[3] == "SlidingOnSigmaS")
        .expect("Σs row");
    assert!(first[14].parse::<usize>().unwrap() >= 1);
    assert!(first[15].contains("Sliding"));
    let lap = rows(&tmp.path().join("v/sliding_lap_0_0.csv"));
    assert!(lap.iter().any(|row| row[3] == "sliding"));
}

#[test]
fn verify_crossing_fixed_points_converge() {
    let tmp = TempDir::new().unwrap();
    let out = twofold(
        tmp.path(),
        &[
            "verify",
            "--out",
            "v",
            "--epsilon",
            "0.01,0.001",
            "--jobs",
            "2",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let fps = rows(&tmp.path().join("v/fixed_points.csv"));
    assert_eq!(fps.len(), 4);
    for row in &fps {
        assert!(field(row, 5) <= 10.0 * field(row, 1));
    }
    assert_eq!(rows(&tmp.path().join("v/convergence.csv")).len(), 2);
}

#[test]
fn resonant_melnikov_vanishes_for_opposite_forcing() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "m.json",
        r#"{"params": {"lambda": -1, "sigma": 2}, "grids": {"theta": 16, "x": 8}}"#,
    );
    let out = twofold(tmp.path(), &["melnikov", "--config", &cfg, "--out", "m"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let res = rows(&tmp.path().join("m/melnikov_resonant.csv"));
    assert_eq!(res.len(), 16);
    assert!(res.iter().all(|row| field(row, 2).abs() < 1e-9));
    assert_eq!(rows(&tmp.path().join("m/melnikov_grid.csv")).len(), 16 * 8);
}

#[test]
fn analyze_reports_the_geometry() {
    let tmp = TempDir::new().unwrap();
    let out = twofold(tmp.path(), &["analyze", "--out", "a"]);
    assert!(out.status.success());
    let r = rows(&tmp.path().join("a/analyze.csv"));
    let get = |k: &str| r.iter().find(|row| row[0] == k).unwrap()[1].clone();
    assert!((get("x_v").parse::<f64>().unwrap() - 1.0).abs() < 1e-10);
    assert!((get("sigma_v").parse::<f64>().unwrap() - 3.0).abs() < 1e-8);
    assert_eq!(get("visibility_v"), "Visible");
    assert_eq!(get("reversible"), "true");
    assert_eq!(rows(&tmp.path().join("a/sigma_table.csv")).len(), 128);
}

#[test]
fn simulate_writes_trajectories_and_events() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "s.json",
        r#"{"run": "simulate", "params": {"lambda": -1.5, "sigma": 3, "epsilons": [0.05]},
            "simulate": {"theta0": 1.5, "x0": 0.87, "duration": 6}}"#,
    );
    let out = twofold(tmp.path(), &["simulate", "--config", &cfg, "--out", "s"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let traj = rows(&tmp.path().join("s/trajectory_0.csv"));
    assert!(traj.len() > 10);
    assert!((field(&traj[0], 0) - 1.5).abs() < 1e-15);
    assert!(!rows(&tmp.path().join("s/events.csv")).is_empty());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "v.json",
        r#"{"params": {"lambda": -1.5, "sigma": 3, "epsilons": [0.05, 0.01]}}"#,
    );
    for dir in ["r1", "r2"] {
        assert!(
            twofold(tmp.path(), &["verify", "--config", &cfg, "--out", dir])
                .status
                .success()
        );
    }
    let one = tmp.path().join("r1");
    let mut names: Vec<_> = fs::read_dir(&one)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 5);
    for name in names {
        assert_eq!(
            fs::read(one.join(&name)).unwrap(),
            fs::read(tmp.path().join("r2").join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn banner_records_the_config_hash() {
    let tmp = TempDir::new().unwrap();
    let a = write_config(tmp.path(), "a.json", r#"{"params": {"lambda": 2}}"#);
    let b = write_config(tmp.path(), "b.json", r#"{"params": {"lambda": 0.5}}"#);
    twofold(tmp.path(), &["predict", "--config", &a, "--out", "a"]);
    twofold(tmp.path(), &["predict", "--config", &b, "--out", "b"]);
    let banner = |d: &str| {
        fs::read_to_string(tmp.path().join(d).join("predictions.csv"))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert!(banner("a").contains(concat!("twofold ", env!("CARGO_PKG_VERSION"))));
    assert!(banner("a").contains("config-sha256="));
    assert_ne!(banner("a"), banner("b"));
}

#[test]
fn config_errors_exit_with_2() {
    let tmp = TempDir::new().unwrap();
    let bad = write_config(tmp.path(), "bad.json", r#"{"params": {"alpah": 1}}"#);
    let out = twofold(tmp.path(), &["predict", "--config", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpah"));
    let out = twofold(tmp.path(), &["verify", "--epsilon", "0.001,0.01"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("params.epsilons"));
    let wrong = write_config(tmp.path(), "w.json", r#"{"run": "analyze"}"#);
    assert_eq!(
        twofold(tmp.path(), &["predict", "--config", &wrong])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        twofold(tmp.path(), &["predict", "--config", "missing.json"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn hypothesis_violations_exit_with_3() {
    let tmp = TempDir::new().unwrap();
    // x' = +1 reverses the orientation required at the folds.
    let h1 = write_config(
        tmp.path(),
        "h1.json",
        r#"{"model": {"f_minus": {"x": [{"coeff": 1}], "y": [{"coeff": 1, "px": 2}, {"coeff": -1}]}}}"#,
    );
    let out = twofold(tmp.path(), &["analyze", "--config", &h1]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    // The same field inline, asked for a period no annulus orbit has.
    let h2 = write_config(
        tmp.path(),
        "h2.json",
        r#"{"model": {"f_minus": {"x": [{"coeff": -1}], "y": [{"coeff": 1, "px": 2}, {"coeff": -1}]}},
            "params": {"sigma": 5}}"#,
    );
    let out = twofold(tmp.path(), &["predict", "--config", &h2]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn numerical_failures_exit_with_4() {
    let tmp = TempDir::new().unwrap();
    // A single Newton step cannot reach a 1e-14 residual at ε = 0.05.
    let cfg = write_config(
        tmp.path(),
        "n.json",
        r#"{"model": {"f_minus": {"x": [{"coeff": -1}], "y": [{"coeff": 1, "px": 2}, {"coeff": -1}]},
                      "g_minus": {"x": [{"coeff": 0.5, "forcing": {"freq": 1.5707963267948966, "phase": 0.3}}],
                                  "y": [{"coeff": 1, "forcing": {"freq": 1.5707963267948966}}]}},
            "params": {"sigma": 2, "epsilons": [0.05]},
            "tolerances": {"newton": 1e-14, "newton_max_iter": 1}}"#,
    );
    let out = twofold(tmp.path(), &["verify", "--config", &cfg]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn help_documents_csv_columns() {
    let tmp = TempDir::new().unwrap();
    let out = twofold(tmp.path(), &["verify", "--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("closure_mismatch") && text.contains("fixed_points.csv"));
    let out = twofold(tmp.path(), &["predict", "--help"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("tau_star"));
}
