//! Report structures and writers. JSON files are the machine-readable record;
//! `.txt` files are for people; `.csv` files hold one series per column for
//! plotting.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gyromag::evaluation::{DriftReport, ParamErrors};
use gyromag::gyrocal::{GyroCalibration, InitEstimate, TraceSample, STATE_DIM};
use gyromag::magcal::MagIntrinsics;
use gyromag::rotation::{dcm_to_euler, Mat3};
use gyromag::simulator::{MonteCarloSummary, RunOutcome, TrajectoryProfile, TruthConfig};
use gyromag::ExcitationReport;
use serde::{Deserialize, Serialize};

use crate::config::MagSource;
use crate::error::{CliError, CliResult};

/// Magnetometer fit condition number above which coverage is reported as poor.
pub const WEAK_MAG_CONDITION: f64 = 1e4;

/// Labels for the 18 error-state entries, in filter order.
pub fn state_labels() -> Vec<String> {
    let mut v: Vec<String> = ["att_x", "att_y", "att_z"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    // vec K is column-stacked.
    for col in 1..=3 {
        for row in 1..=3 {
            v.push(format!("k{row}{col}"));
        }
    }
    v.extend(
        ["eps_x", "eps_y", "eps_z", "mi_x", "mi_y", "mi_z"]
            .iter()
            .map(|s| s.to_string()),
    );
    debug_assert_eq!(v.len(), STATE_DIM);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// SHA-256 of the input log file, when there is one.
    pub input_sha256: Option<String>,
    /// Seconds since the Unix epoch. The only field that changes between
    /// otherwise identical runs.
    pub generated_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub provenance: Provenance,
    pub truth: TruthConfig,
    pub trajectory: TrajectoryProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagSummary {
    pub source: MagSource,
    pub intrinsics: MagIntrinsics,
    /// Norm-residual RMS of the log under these intrinsics.
    pub norm_residual_rms: f64,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    /// Conditioning of the fit; only present for fitted intrinsics.
    pub condition_number: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagCalFile {
    pub provenance: Provenance,
    pub magnetometer: MagSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GyroSummary {
    /// `[k11, k12, k13, k22, k23, k33]`
    pub k_g_upper: [f64; 6],
    pub bias_deg_s: [f64; 3],
    /// Roll, pitch, yaw of `C_b^m` (ZYX), deg. Absent at gimbal lock.
    pub misalignment_euler_deg: Option<[f64; 3]>,
}

impl GyroSummary {
    pub fn from_calibration(cal: &GyroCalibration) -> Self {
        let k = &cal.k_g;
        Self {
            k_g_upper: [
                k[(0, 0)],
                k[(0, 1)],
                k[(0, 2)],
                k[(1, 1)],
                k[(1, 2)],
                k[(2, 2)],
            ],
            bias_deg_s: cal.eps_b.map(f64::to_degrees).into(),
            misalignment_euler_deg: dcm_to_euler(&cal.c_b_m).ok().map(|e| e.to_degrees()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub samples: usize,
    pub duration_s: f64,
    /// Sample range `[start, end)` left after trimming stationary ends.
    pub used_range: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Uncertainty {
    pub labels: Vec<String>,
    pub covariance_diag: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub updates: usize,
    pub gated: usize,
    pub max_orthogonality_defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub provenance: Provenance,
    pub input: InputSummary,
    pub magnetometer: MagSummary,
    pub gyroscope: GyroSummary,
    pub uncertainty: Uncertainty,
    pub excitation: ExcitationReport,
    pub weak_excitation: bool,
    pub initialization: InitEstimate,
    pub filter: FilterSummary,
    /// Full parameter set, as read back by `evaluate`.
    pub calibration: GyroCalibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttitudeErrorSummary {
    pub max_deg: f64,
    pub post_convergence_max_deg: f64,
    pub convergence_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub provenance: Provenance,
    pub drift: DriftReport,
    pub uncalibrated_drift: DriftReport,
    /// Calibrated over uncalibrated drift angle.
    pub drift_ratio: f64,
    pub parameter_errors: Option<ParamErrors>,
    pub attitude_error: Option<AttitudeErrorSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub index: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub provenance: Provenance,
    pub runs: usize,
    pub summary: MonteCarloSummary,
    pub failures: Vec<RunFailure>,
}

pub fn write_text(path: &Path, text: &str) -> CliResult<PathBuf> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::write(path, e))?;
    Ok(path.to_path_buf())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<PathBuf> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::ReadArtifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::ReadArtifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Comma-separated table; `Display` for f64 is the shortest exact form.
pub fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn trace_csv(trace: &[TraceSample]) -> String {
    let header = [
        "t",
        "qw",
        "qx",
        "qy",
        "qz",
        "k11",
        "k12",
        "k13",
        "k21",
        "k22",
        "k23",
        "k31",
        "k32",
        "k33",
        "eps_x_deg_s",
        "eps_y_deg_s",
        "eps_z_deg_s",
        "mi_x",
        "mi_y",
        "mi_z",
        "att_sigma_deg",
    ];
    let rows = trace.iter().map(|s| {
        let q = nalgebra::UnitQuaternion::from_matrix(s.c_m_i.matrix());
        let mut row = vec![s.t, q.w, q.i, q.j, q.k];
        row.extend(
            (0..3)
                .flat_map(|i| (0..3).map(move |j| (i, j)))
                .map(|(i, j)| s.k[(i, j)]),
        );
        row.extend(s.eps.iter().map(|v| v.to_degrees()));
        row.extend(s.m_i.iter());
        row.push(s.attitude_variance().sqrt().to_degrees());
        row
    });
    csv_table(&header, rows)
}

fn fmt_upper(out: &mut String, k: &Mat3) {
    let _ = writeln!(
        out,
        "  [{:10.6} {:10.6} {:10.6}]",
        k[(0, 0)],
        k[(0, 1)],
        k[(0, 2)]
    );
    let _ = writeln!(out, "  [{:>10} {:10.6} {:10.6}]", "", k[(1, 1)], k[(1, 2)]);
    let _ = writeln!(out, "  [{:>10} {:>10} {:10.6}]", "", "", k[(2, 2)]);
}

fn fmt_provenance(out: &mut String, p: &Provenance) {
    let _ = writeln!(out, "{} {} ({})", p.tool, p.version, p.command);
    let _ = writeln!(out, "config sha256: {}", p.config_hash);
    let _ = writeln!(out, "seed: {}", p.seed);
    if let Some(h) = &p.input_sha256 {
        let _ = writeln!(out, "input sha256: {h}");
    }
}

pub fn render_calibration(r: &CalibrationReport) -> String {
    let mut out = String::new();
    fmt_provenance(&mut out, &r.provenance);
    let _ = writeln!(
        out,
        "\ninput: {} samples, {:.2} s, using [{}, {})",
        r.input.samples, r.input.duration_s, r.input.used_range[0], r.input.used_range[1]
    );

    let m = &r.magnetometer;
    let _ = writeln!(out, "\nmagnetometer ({})", m.source.as_str());
    let _ = writeln!(out, "  norm residual rms: {:.5}", m.norm_residual_rms);
    if let Some(c) = m.condition_number {
        let _ = writeln!(out, "  fit condition number: {c:.3e}");
        if c > WEAK_MAG_CONDITION {
            let _ = writeln!(
                out,
                "  warning: poor attitude coverage, magnetometer fit is weakly determined"
            );
        }
    }
    let _ = writeln!(out, "  R:");
    fmt_upper(&mut out, &m.intrinsics.r);
    let h = m.intrinsics.h;
    let _ = writeln!(out, "  h: [{:.6} {:.6} {:.6}]", h.x, h.y, h.z);

    let cal = &r.calibration;
    let _ = writeln!(out, "\ngyroscope");
    let _ = writeln!(out, "  K_g:");
    fmt_upper(&mut out, &cal.k_g);
    let b = r.gyroscope.bias_deg_s;
    let _ = writeln!(out, "  bias (deg/s): [{:.5} {:.5} {:.5}]", b[0], b[1], b[2]);
    match r.gyroscope.misalignment_euler_deg {
        Some(e) => {
            let _ = writeln!(
                out,
                "  misalignment roll/pitch/yaw (deg): [{:.4} {:.4} {:.4}]",
                e[0], e[1], e[2]
            );
        }
        None => {
            let _ = writeln!(out, "  misalignment: Euler angles undefined (gimbal lock)");
        }
    }

    let _ = writeln!(out, "\nuncertainty (1 sigma, filter state)");
    for (label, var) in r
        .uncertainty
        .labels
        .iter()
        .zip(&r.uncertainty.covariance_diag)
    {
        let _ = writeln!(out, "  {label:>6}: {:.3e}", var.max(0.0).sqrt());
    }

    let x = &r.excitation;
    let _ = writeln!(out, "\nexcitation");
    let _ = writeln!(out, "  gramian rank: {} / 12", x.rank);
    let _ = writeln!(out, "  condition number: {:.3e}", x.condition_number);
    let _ = writeln!(
        out,
        "  rotation per axis (rad): [{:.2} {:.2} {:.2}]",
        x.axes_excited[0], x.axes_excited[1], x.axes_excited[2]
    );
    if r.weak_excitation {
        let _ = writeln!(
            out,
            "  warning: weak excitation, estimates may be poorly determined"
        );
    }
    let _ = writeln!(
        out,
        "\nfilter: {} updates, {} gated, max orthogonality defect {:.2e}",
        r.filter.updates, r.filter.gated, r.filter.max_orthogonality_defect
    );
    out
}

fn fmt_drift(out: &mut String, name: &str, d: &DriftReport) {
    let _ = write!(
        out,
        "  {name}: {:.4} deg over {:.1} s",
        d.drift_angle_deg, d.duration
    );
    if let Some(e) = d.euler_drift_deg {
        let _ = write!(
            out,
            " (roll {:.4}, pitch {:.4}, yaw {:.4})",
            e[0], e[1], e[2]
        );
    }
    out.push('\n');
}

pub fn render_evaluation(r: &EvaluationReport) -> String {
    let mut out = String::new();
    fmt_provenance(&mut out, &r.provenance);
    let _ = writeln!(out, "\ndead reckoning (same-pose endpoints)");
    fmt_drift(&mut out, "calibrated", &r.drift);
    fmt_drift(&mut out, "uncalibrated", &r.uncalibrated_drift);
    let _ = writeln!(out, "  ratio: {:.4}", r.drift_ratio);
    if !r.drift.endpoints_stationary {
        let _ = writeln!(out, "  warning: log does not start and end at rest");
    }
    if let Some(p) = &r.parameter_errors {
        let _ = writeln!(out, "\nparameter errors versus truth");
        let s = p.scale_factor_ppm;
        let _ = writeln!(
            out,
            "  scale factor (ppm): [{:.1} {:.1} {:.1}]",
            s[0], s[1], s[2]
        );
        let n = p.non_orthogonality_deg;
        let _ = writeln!(
            out,
            "  non-orthogonality (deg): [{:.4} {:.4} {:.4}]",
            n[0], n[1], n[2]
        );
        let b = p.bias_deg_s;
        let _ = writeln!(out, "  bias (deg/s): [{:.5} {:.5} {:.5}]", b[0], b[1], b[2]);
        let e = p.misalignment_euler_deg;
        let _ = writeln!(
            out,
            "  misalignment (deg): [{:.4} {:.4} {:.4}], total {:.4}",
            e[0], e[1], e[2], p.misalignment_angle_deg
        );
    }
    if let Some(a) = &r.attitude_error {
        let _ = writeln!(out, "\nattitude error versus truth");
        let _ = writeln!(out, "  converged after {:.2} s", a.convergence_time_s);
        let _ = writeln!(
            out,
            "  max after convergence: {:.4} deg (overall {:.4} deg)",
            a.post_convergence_max_deg, a.max_deg
        );
    }
    out
}

pub fn monte_carlo_csv(runs: &[RunOutcome]) -> String {
    let header = [
        "run",
        "ok",
        "k11",
        "k12",
        "k13",
        "k22",
        "k23",
        "k33",
        "eps_x_deg_s",
        "eps_y_deg_s",
        "eps_z_deg_s",
        "roll_deg",
        "pitch_deg",
        "yaw_deg",
        "max_attitude_error_deg",
        "convergence_time_s",
    ];
    let rows = runs.iter().map(|r| {
        let mut row = vec![r.index as f64];
        match &r.result {
            Ok(res) => {
                let s = GyroSummary::from_calibration(&res.calibration);
                row.push(1.0);
                row.extend(s.k_g_upper);
                row.extend(s.bias_deg_s);
                row.extend(s.misalignment_euler_deg.unwrap_or([f64::NAN; 3]));
                row.push(res.max_attitude_error_deg);
                row.push(res.convergence_time);
            }
            Err(_) => {
                row.push(0.0);
                row.extend([f64::NAN; 14]);
            }
        }
        row
    });
    csv_table(&header, rows)
}

pub fn render_monte_carlo(r: &MonteCarloReport) -> String {
    let mut out = String::new();
    fmt_provenance(&mut out, &r.provenance);
    let s = &r.summary;
    let _ = writeln!(
        out,
        "\n{} runs: {} ok, {} failed",
        r.runs, s.runs_ok, s.runs_failed
    );
    let stat =
        |out: &mut String, name: &str, idx: &[usize], mean: &[f64], std: Option<&Vec<f64>>| {
            let _ = write!(out, "  {name:<22}");
            for &i in idx {
                match std {
                    Some(sd) => {
                        let _ = write!(out, " {:.5}±{:.1e}", mean[i], sd[i]);
                    }
                    None => {
                        let _ = write!(out, " {:.5}", mean[i]);
                    }
                }
            }
            out.push('\n');
        };
    stat(
        &mut out,
        "K_g (upper)",
        &[0, 1, 2, 4, 5, 8],
        &s.k_g.mean,
        s.k_g.std.as_ref(),
    );
    stat(
        &mut out,
        "bias (deg/s)",
        &[0, 1, 2],
        &s.eps_b_deg.mean,
        s.eps_b_deg.std.as_ref(),
    );
    stat(
        &mut out,
        "misalignment (deg)",
        &[0, 1, 2],
        &s.misalignment_deg.mean,
        s.misalignment_deg.std.as_ref(),
    );
    let _ = writeln!(
        out,
        "  max attitude error after convergence: {:.4} deg",
        s.max_attitude_error_deg
    );
    for f in &r.failures {
        let _ = writeln!(out, "  run {} failed: {}", f.index, f.error);
    }
    out
}
