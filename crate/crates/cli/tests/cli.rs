//! End-to-end runs of the `gyromag` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gyromag::log::write_log_file;
use gyromag::simulator::{generate_trajectory, synthesize, TrajectoryProfile, TruthConfig};
use serde_json::Value;

fn gyromag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gyromag"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn short_config(dir: &Path, duration: f64) -> PathBuf {
    let path = dir.join("short.toml");
    fs::write(
        &path,
        format!("seed = 7\nruns = 3\n[truth]\nduration = {duration}\n"),
    )
    .unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = gyromag(&["simulate", "--sede", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--sede"));
}

#[test]
fn bad_config_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[truth]\ndurration = 10.0\n").unwrap();
    let out = gyromag(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.starts_with("error[input]:"), "{err}");
    assert!(err.contains("durration"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn evaluate_needs_a_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let out = gyromag(&["evaluate", "--output", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("missing input: calibration"), "{err}");
}

#[test]
fn single_axis_log_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TruthConfig {
        duration: 30.0,
        ..TruthConfig::reference()
    }
    .noise_free();
    let profile = TrajectoryProfile::single_axis(cfg.m_e, 40f64.to_radians(), 8.0, cfg.duration);
    let traj = generate_trajectory(&profile, &cfg).unwrap();
    let log = dir.path().join("spin.csv");
    write_log_file(&synthesize(&traj, &cfg, 0).unwrap(), &log).unwrap();

    let out = gyromag(&[
        "calibrate-gyro",
        "--log",
        log.to_str().unwrap(),
        "--mag-source",
        "truth",
        "--output",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr(&out);
    assert!(err.starts_with("error[excitation]:"), "{err}");
    assert!(err.contains("insufficient excitation"), "{err}");
    assert!(!dir.path().join("calibration.json").exists());
}

#[test]
fn pipeline_is_deterministic_apart_from_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 30.0);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let res = gyromag(&[
            "pipeline",
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            out.to_str().unwrap(),
        ]);
        assert!(res.status.success(), "{}", stderr(&res));
    }
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 9, "{names:?}");
    for name in names {
        let strip = |dir: &Path| -> Vec<String> {
            fs::read_to_string(dir.join(&name))
                .unwrap()
                .lines()
                .filter(|l| !l.contains("\"generated_at\""))
                .map(str::to_owned)
                .collect()
        };
        assert_eq!(strip(&a), strip(&b), "{name:?} differs");
    }
}

#[test]
fn calibration_report_is_complete() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 60.0);
    let out_dir = dir.path().join("out");
    let out = out_dir.to_str().unwrap();
    let cfg = cfg.to_str().unwrap();
    assert!(gyromag(&["simulate", "--config", cfg, "--output", out])
        .status
        .success());
    assert!(
        gyromag(&["calibrate-mag", "--config", cfg, "--output", out])
            .status
            .success()
    );
    let res = gyromag(&[
        "calibrate-gyro",
        "--config",
        cfg,
        "--output",
        out,
        "--mag-source",
        "file",
    ]);
    assert!(res.status.success(), "{}", stderr(&res));

    let report = read_json(&out_dir.join("calibration.json"));
    let diag = report["uncertainty"]["covariance_diag"].as_array().unwrap();
    assert_eq!(diag.len(), 18);
    assert!(diag
        .iter()
        .all(|v| v.as_f64().is_some_and(|x| x.is_finite() && x >= 0.0)));
    assert_eq!(report["magnetometer"]["source"], "file");
    assert_eq!(report["excitation"]["rank"], 12);
    assert_eq!(report["provenance"]["seed"], 7);
    assert_eq!(
        report["provenance"]["config_hash"].as_str().unwrap().len(),
        64
    );
    let k = report["gyroscope"]["k_g_upper"].as_array().unwrap();
    assert!((k[0].as_f64().unwrap() - 1.1).abs() < 0.01);

    let res = gyromag(&["evaluate", "--config", cfg, "--output", out]);
    assert!(res.status.success(), "{}", stderr(&res));
    let eval = read_json(&out_dir.join("evaluation.json"));
    assert!(eval["drift_ratio"].as_f64().unwrap() < 0.1);
    assert!(eval["parameter_errors"].is_object());
    let text = fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert!(text.contains("K_g"));
    assert!(!text.contains("warning"), "{text}");
}

#[test]
fn short_log_warns_about_magnetometer_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 40.0);
    let out = dir.path().to_str().unwrap();
    let cfg = cfg.to_str().unwrap();
    assert!(gyromag(&["simulate", "--config", cfg, "--output", out])
        .status
        .success());
    let res = gyromag(&["calibrate-mag", "--config", cfg, "--output", out]);
    assert!(res.status.success());
    assert!(
        stderr(&res).contains("warning: magnetometer fit condition number"),
        "{}",
        stderr(&res)
    );
}

#[test]
fn monte_carlo_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 20.0);
    let out_dir = dir.path().join("mc");
    let res = gyromag(&[
        "monte-carlo",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        out_dir.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let summary = read_json(&out_dir.join("mc_summary.json"));
    assert_eq!(summary["summary"]["runs_ok"], 3);
    let csv = fs::read_to_string(out_dir.join("mc_runs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}
