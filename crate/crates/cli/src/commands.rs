//! One function per subcommand. Each returns the paths it wrote.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use gyromag::evaluation::{
    attitude_error_trace, compare_params, convergence_index, dead_reckon, gauge_align,
    CONVERGENCE_FACTOR,
};
use gyromag::gyrocal::{run_calibration, trim_stationary, CalibrationRun, GyroCalibration};
use gyromag::log::{parse_log, write_log_file, RawLog};
use gyromag::magcal::{self, norm_residual_rms, MagIntrinsics};
use gyromag::observability::gramian;
use gyromag::rotation::RotMat;
use gyromag::simulator::{
    self, generate_trajectory, monte_carlo, synthesize, true_mag_attitudes, MonteCarloOptions,
};
use gyromag::{Error, TruthConfig};

use crate::config::{sha256_hex, MagSource, RunConfig};
use crate::error::{CliError, CliResult};
use crate::report::*;

const TOOL: &str = "gyromag";

/// Condition number above which a full-rank log is still flagged as weakly
/// excited.
pub const WEAK_CONDITION: f64 = gyromag::observability::WARN_CONDITION;

fn provenance(cfg: &RunConfig, command: &str, input: Option<&Path>) -> CliResult<Provenance> {
    let input_sha256 = match input {
        Some(p) => Some(sha256_hex(&std::fs::read(p).map_err(|e| {
            CliError::ReadArtifact {
                path: p.to_path_buf(),
                message: e.to_string(),
            }
        })?)),
        None => None,
    };
    Ok(Provenance {
        tool: TOOL.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        input_sha256,
        generated_at: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    })
}

fn log_path(cfg: &RunConfig) -> PathBuf {
    cfg.log
        .clone()
        .unwrap_or_else(|| cfg.output_file("log.csv"))
}

fn truth_path(cfg: &RunConfig) -> PathBuf {
    cfg.truth_file
        .clone()
        .unwrap_or_else(|| cfg.output_file("truth.json"))
}

fn require(path: &Path, what: &'static str, hint: &'static str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact {
            what,
            path: path.to_path_buf(),
            hint,
        })
    }
}

fn load_log(cfg: &RunConfig) -> CliResult<(PathBuf, RawLog)> {
    let path = log_path(cfg);
    require(&path, "sensor log", "run `gyromag simulate` or pass --log")?;
    let log = parse_log(&path)?;
    Ok((path, log))
}

fn load_truth_sidecar(cfg: &RunConfig) -> CliResult<Option<TruthSidecar>> {
    let path = truth_path(cfg);
    if path.is_file() {
        read_json(&path).map(Some)
    } else {
        Ok(None)
    }
}

/// Writes `log.csv` and the `truth.json` sidecar.
pub fn simulate(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let truth = cfg.truth_config()?;
    let profile = cfg.profile(&truth);
    let traj = generate_trajectory(&profile, &truth)?;
    let log = synthesize(&traj, &truth, cfg.seed)?;

    let path = log_path(cfg);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    }
    write_log_file(&log, &path).map_err(|e| CliError::write(&path, e))?;
    let sidecar = TruthSidecar {
        provenance: provenance(cfg, "simulate", None)?,
        truth,
        trajectory: profile,
    };
    let truth_file = write_json(&truth_path(cfg), &sidecar)?;
    Ok(vec![path, truth_file])
}

fn fit_mag(cfg: &RunConfig, log: &RawLog, input: &Path) -> CliResult<MagCalFile> {
    let fit = magcal::calibrate(&log.mag())?;
    if fit.condition_number > WEAK_MAG_CONDITION {
        eprintln!(
            "warning: magnetometer fit condition number {:.1e}; the log covers too few attitudes for a reliable fit",
            fit.condition_number
        );
    }
    Ok(MagCalFile {
        provenance: provenance(cfg, "calibrate-mag", Some(input))?,
        magnetometer: MagSummary {
            source: MagSource::Fit,
            intrinsics: fit.intrinsics,
            norm_residual_rms: fit.norm_residual_rms,
            iterations: Some(fit.iterations),
            converged: Some(fit.converged),
            condition_number: Some(fit.condition_number),
        },
    })
}

/// Ellipsoid fit of the log's magnetometer channel; writes `magcal.json`.
pub fn calibrate_mag(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let (path, log) = load_log(cfg)?;
    let file = fit_mag(cfg, &log, &path)?;
    let magcal_file = cfg
        .magcal_file
        .clone()
        .unwrap_or_else(|| cfg.output_file("magcal.json"));
    Ok(vec![write_json(&magcal_file, &file)?])
}

fn mag_intrinsics(cfg: &RunConfig, log: &RawLog, input: &Path) -> CliResult<MagSummary> {
    let source = cfg.mag_source.unwrap_or(MagSource::Fit);
    let summary = |intrinsics: MagIntrinsics| MagSummary {
        source,
        intrinsics,
        norm_residual_rms: norm_residual_rms(&intrinsics, &log.mag()),
        iterations: None,
        converged: None,
        condition_number: None,
    };
    Ok(match source {
        MagSource::Fit => fit_mag(cfg, log, input)?.magnetometer,
        MagSource::File => {
            let path = cfg
                .magcal_file
                .clone()
                .unwrap_or_else(|| cfg.output_file("magcal.json"));
            require(
                &path,
                "magnetometer calibration",
                "run `gyromag calibrate-mag` or pass --magcal",
            )?;
            let file: MagCalFile = read_json(&path)?;
            summary(file.magnetometer.intrinsics)
        }
        MagSource::Truth => {
            let truth = match load_truth_sidecar(cfg)? {
                Some(s) => s.truth,
                None => cfg.truth_config()?,
            };
            summary(truth.mag_intrinsics())
        }
        MagSource::Identity => summary(MagIntrinsics::identity()),
    })
}

/// Gramian rank on the span the filter will see. A rank-deficient log is
/// refused before any estimation is attempted.
fn check_excitation(
    cfg: &RunConfig,
    log: &RawLog,
    intrinsics: &MagIntrinsics,
) -> CliResult<gyromag::ExcitationReport> {
    let times = log.times();
    let gyro = log.gyro();
    let opts = &cfg.calibration;
    let (start, end) = trim_stationary(
        &times,
        &gyro,
        opts.stationary_threshold,
        opts.stationary_min_duration,
    );
    let mag = intrinsics.apply_all(&log.mag()[start..end]);
    let report = gramian(&times[start..end], &mag, &gyro[start..end], None)?;
    if !report.is_full_rank() {
        return Err(Error::InsufficientExcitation {
            condition: report.condition_number,
        }
        .into());
    }
    Ok(report)
}

/// Everything `calibrate-gyro` computes, kept in memory for `pipeline`.
pub struct GyroOutcome {
    pub report: CalibrationReport,
    pub run: CalibrationRun,
    pub written: Vec<PathBuf>,
}

fn calibrate_gyro_inner(cfg: &RunConfig, command: &str) -> CliResult<GyroOutcome> {
    let (path, log) = load_log(cfg)?;
    let mag = mag_intrinsics(cfg, &log, &path)?;
    let mut written = Vec::new();
    if mag.source == MagSource::Fit {
        let magcal_file = cfg
            .magcal_file
            .clone()
            .unwrap_or_else(|| cfg.output_file("magcal.json"));
        let file = MagCalFile {
            provenance: provenance(cfg, command, Some(&path))?,
            magnetometer: mag.clone(),
        };
        written.push(write_json(&magcal_file, &file)?);
    }
    let excitation = check_excitation(cfg, &log, &mag.intrinsics)?;

    let noise = cfg.noise.unwrap_or_default();
    let mut options = cfg.calibration;
    options.record_trace = true;
    let run = run_calibration(&log, &mag.intrinsics, &noise, &options)?;

    let d = &run.diagnostics;
    let report = CalibrationReport {
        provenance: provenance(cfg, command, Some(&path))?,
        input: InputSummary {
            samples: log.len(),
            duration_s: log.duration(),
            used_range: [d.used_range.0, d.used_range.1],
        },
        magnetometer: mag,
        gyroscope: GyroSummary::from_calibration(&run.calibration),
        uncertainty: Uncertainty {
            labels: state_labels(),
            covariance_diag: run.calibration.final_covariance_diag.clone(),
        },
        weak_excitation: excitation.condition_number > WEAK_CONDITION,
        excitation,
        initialization: d.init,
        filter: FilterSummary {
            updates: d.updates,
            gated: d.gated,
            max_orthogonality_defect: d.max_orthogonality_defect,
        },
        calibration: run.calibration.clone(),
    };
    let cal_file = cfg
        .calibration_file
        .clone()
        .unwrap_or_else(|| cfg.output_file("calibration.json"));
    written.push(write_json(&cal_file, &report)?);
    written.push(write_text(
        &cfg.output_file("report.txt"),
        &render_calibration(&report),
    )?);
    written.push(write_text(
        &cfg.output_file("trace.csv"),
        &trace_csv(&run.trace),
    )?);
    Ok(GyroOutcome {
        report,
        run,
        written,
    })
}

/// Gyro calibration of a log; writes `calibration.json`, `report.txt` and
/// `trace.csv` (plus `magcal.json` when the magnetometer is fitted).
pub fn calibrate_gyro(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    Ok(calibrate_gyro_inner(cfg, "calibrate-gyro")?.written)
}

/// Magnetometer fit followed by gyro calibration.
pub fn calibrate(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    Ok(calibrate_gyro_inner(cfg, "calibrate")?.written)
}

/// Attitude error of a calibration run against simulated truth, after both
/// series are expressed relative to their first sample.
pub fn attitude_errors(
    run: &CalibrationRun,
    truth: &TruthConfig,
    profile: &simulator::TrajectoryProfile,
) -> CliResult<Vec<(f64, f64)>> {
    let traj = generate_trajectory(profile, truth)?;
    let (start, end) = run.diagnostics.used_range;
    if end > traj.len() || run.trace.len() != end - start {
        return Err(CliError::InvalidConfig(
            "truth sidecar does not match the log used for calibration".into(),
        ));
    }
    let truth_att = gauge_align(&true_mag_attitudes(&traj, truth)[start..end]);
    let est_att: Vec<RotMat> = gauge_align(&run.trace.iter().map(|s| s.c_m_i).collect::<Vec<_>>());
    let times: Vec<f64> = run.trace.iter().map(|s| s.t).collect();
    let est: Vec<(f64, RotMat)> = times.iter().copied().zip(est_att).collect();
    let tru: Vec<(f64, RotMat)> = traj.times[start..end]
        .iter()
        .copied()
        .zip(truth_att)
        .collect();
    let errors = attitude_error_trace(&est, &tru)?;
    Ok(times.into_iter().zip(errors).collect())
}

fn evaluate_inner(
    cfg: &RunConfig,
    command: &str,
    run: Option<&CalibrationRun>,
) -> CliResult<Vec<PathBuf>> {
    let cal_path = cfg
        .calibration_file
        .clone()
        .unwrap_or_else(|| cfg.output_file("calibration.json"));
    require(
        &cal_path,
        "calibration",
        "run `gyromag calibrate` first or pass --calibration",
    )?;
    let report: CalibrationReport = read_json(&cal_path)?;
    let (path, log) = load_log(cfg)?;
    let times = log.times();
    let gyro = log.gyro();
    let threshold = cfg.calibration.stationary_threshold;
    let calibrated = dead_reckon(&times, &gyro, &report.calibration, threshold)?;
    let raw = dead_reckon(&times, &gyro, &GyroCalibration::identity(), threshold)?;

    let sidecar = load_truth_sidecar(cfg)?;
    let parameter_errors = match &sidecar {
        Some(s) => Some(compare_params(&report.calibration, &s.truth)?),
        None => None,
    };
    let mut written = Vec::new();
    let attitude_error = match (run, &sidecar) {
        (Some(run), Some(s)) => {
            let series = attitude_errors(run, &s.truth, &s.trajectory)?;
            let variances: Vec<f64> = run.trace.iter().map(|t| t.attitude_variance()).collect();
            let settled = convergence_index(&variances, CONVERGENCE_FACTOR);
            let rows = series.iter().map(|(t, e)| vec![*t, *e]);
            written.push(write_text(
                &cfg.output_file("attitude_error.csv"),
                &csv_table(&["t", "error_deg"], rows),
            )?);
            Some(AttitudeErrorSummary {
                max_deg: series.iter().map(|p| p.1).fold(0.0, f64::max),
                post_convergence_max_deg: series[settled..].iter().map(|p| p.1).fold(0.0, f64::max),
                convergence_time_s: series[settled].0 - series[0].0,
            })
        }
        _ => None,
    };

    let header = ["t", "angle_deg", "angle_uncalibrated_deg"];
    let rows = calibrated
        .attitudes
        .iter()
        .zip(&raw.attitudes)
        .zip(&times)
        .map(|((c, r), t)| {
            vec![
                *t,
                c.angle_to(&RotMat::identity()).to_degrees(),
                r.angle_to(&RotMat::identity()).to_degrees(),
            ]
        });
    let table = csv_table(&header, rows);
    let drift_ratio = calibrated.report.drift_angle_deg / raw.report.drift_angle_deg;
    let eval = EvaluationReport {
        provenance: provenance(cfg, command, Some(&path))?,
        drift: calibrated.report,
        uncalibrated_drift: raw.report,
        drift_ratio,
        parameter_errors,
        attitude_error,
    };
    written.push(write_json(&cfg.output_file("evaluation.json"), &eval)?);
    written.push(write_text(
        &cfg.output_file("evaluation.txt"),
        &render_evaluation(&eval),
    )?);
    written.push(write_text(&cfg.output_file("deadreckon.csv"), &table)?);
    Ok(written)
}

/// Dead-reckoning drift with and without the calibration, plus parameter
/// errors when a truth sidecar is present.
pub fn evaluate(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    evaluate_inner(cfg, "evaluate", None)
}

/// Simulate, calibrate and evaluate in one go. Also writes the attitude
/// error against truth.
pub fn pipeline(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let mut written = simulate(cfg)?;
    let gyro = calibrate_gyro_inner(cfg, "pipeline")?;
    written.extend(gyro.written);
    written.extend(evaluate_inner(cfg, "pipeline", Some(&gyro.run))?);
    Ok(written)
}

/// Repeated simulate-and-calibrate with independent noise per run.
pub fn run_monte_carlo(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let truth = cfg.truth_config()?;
    let profile = cfg.profile(&truth);
    let mag_source = match cfg.mag_source {
        None | Some(MagSource::Truth) => simulator::MagSource::Truth,
        Some(MagSource::Fit) => simulator::MagSource::Fit,
        Some(other) => {
            return Err(CliError::InvalidConfig(format!(
                "mag_source {other:?} is not available for monte-carlo (use fit or truth)"
            )))
        }
    };
    let options = MonteCarloOptions {
        noise: cfg.noise.unwrap_or_else(|| truth.matched_noise()),
        calibration: cfg.calibration,
        mag_source,
    };
    let mc = monte_carlo(&truth, &profile, cfg.runs, cfg.seed, &options)?;
    let failures = mc
        .runs
        .iter()
        .filter_map(|r| {
            r.result.as_ref().err().map(|e| RunFailure {
                index: r.index,
                error: e.clone(),
            })
        })
        .collect();
    let report = MonteCarloReport {
        provenance: provenance(cfg, "monte-carlo", None)?,
        runs: cfg.runs,
        summary: mc.summary,
        failures,
    };
    Ok(vec![
        write_json(&cfg.output_file("mc_summary.json"), &report)?,
        write_text(
            &cfg.output_file("mc_summary.txt"),
            &render_monte_carlo(&report),
        )?,
        write_text(&cfg.output_file("mc_runs.csv"), &monte_carlo_csv(&mc.runs))?,
    ])
}
