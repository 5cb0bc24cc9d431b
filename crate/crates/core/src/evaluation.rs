//! Calibration quality metrics: parameter errors against a known truth,
//! attitude error traces, and same-pose dead-reckoning drift.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gyrocal::GyroCalibration;
use crate::rotation::{dcm_to_euler, so3_exp, RotMat, Vec3};
use crate::simulator::TruthConfig;

/// Attitude covariance counts as settled once it stays below this multiple
/// of its final value.
pub const CONVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// s
    pub duration: f64,
    pub start_attitude: RotMat,
    pub end_attitude: RotMat,
    /// Total rotation between start and end attitude (deg).
    pub drift_angle_deg: f64,
    /// ZYX Euler angles of `C_startᵀ C_end` (deg), absent at gimbal lock.
    pub euler_drift_deg: Option<[f64; 3]>,
    /// Calibrated rate magnitude at both ends below the stationary threshold.
    pub endpoints_stationary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeadReckoning {
    pub attitudes: Vec<RotMat>,
    pub report: DriftReport,
}

/// Integrates calibrated rates `K_g y + ε_b` from the identity attitude.
/// Row `k` is held over `[t_k, t_{k+1}]`.
pub fn dead_reckon(
    times: &[f64],
    gyro: &[Vec3],
    cal: &GyroCalibration,
    stationary_threshold: f64,
) -> Result<DeadReckoning> {
    if times.is_empty() {
        return Err(Error::EmptySeries);
    }
    if gyro.len() != times.len() {
        return Err(Error::LengthMismatch(times.len(), gyro.len()));
    }
    let mut c = RotMat::identity();
    let mut attitudes = Vec::with_capacity(times.len());
    attitudes.push(c);
    for k in 0..times.len() - 1 {
        let dt = times[k + 1] - times[k];
        if !(dt > 0.0) {
            return Err(Error::NonMonotonic { index: k + 1 });
        }
        c = c * so3_exp(&(cal.apply(&gyro[k]) * dt));
        if (k + 1) % 1000 == 0 {
            c = RotMat::orthonormalize(c.matrix());
        }
        attitudes.push(c);
    }
    let start = attitudes[0];
    let end = *attitudes.last().expect("non-empty");
    let rel = start.transpose() * end;
    let n = gyro.len();
    let endpoints_stationary = cal.apply(&gyro[0]).norm() < stationary_threshold
        && cal.apply(&gyro[n - 1]).norm() < stationary_threshold;
    let report = DriftReport {
        duration: times[n - 1] - times[0],
        start_attitude: start,
        end_attitude: end,
        drift_angle_deg: start.angle_to(&end).to_degrees(),
        euler_drift_deg: dcm_to_euler(&rel).ok().map(|e| e.to_degrees()),
        endpoints_stationary,
    };
    Ok(DeadReckoning { attitudes, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamErrors {
    /// |K̂_ii / K_ii − 1| in ppm.
    pub scale_factor_ppm: [f64; 3],
    /// |ΔK_g| for the (0,1), (0,2), (1,2) entries, as small angles in deg.
    pub non_orthogonality_deg: [f64; 3],
    /// |Δε_b| in deg/s.
    pub bias_deg_s: [f64; 3],
    /// |ΔEuler(C_b^m)| in deg, ZYX roll/pitch/yaw.
    pub misalignment_euler_deg: [f64; 3],
    /// Angle of `Ĉ_b^m (C_b^m)ᵀ` in deg.
    pub misalignment_angle_deg: f64,
}

pub fn compare_params(estimate: &GyroCalibration, truth: &TruthConfig) -> Result<ParamErrors> {
    let (ek, tk) = (estimate.k_g, truth.k_g);
    let scale_factor_ppm = [0, 1, 2].map(|i| (ek[(i, i)] / tk[(i, i)] - 1.0).abs() * 1e6);
    let non_orthogonality_deg =
        [(0, 1), (0, 2), (1, 2)].map(|(i, j)| (ek[(i, j)] - tk[(i, j)]).abs().to_degrees());
    let bias_deg_s = [0, 1, 2].map(|i| (estimate.eps_b[i] - truth.eps_b[i]).abs().to_degrees());
    let e_est = dcm_to_euler(&estimate.c_b_m)?.to_degrees();
    let e_true = dcm_to_euler(&truth.c_b_m)?.to_degrees();
    let misalignment_euler_deg = [0, 1, 2].map(|i| wrap_deg(e_est[i] - e_true[i]).abs());
    let misalignment_angle_deg = truth.c_b_m.angle_to(&estimate.c_b_m).to_degrees();
    Ok(ParamErrors {
        scale_factor_ppm,
        non_orthogonality_deg,
        bias_deg_s,
        misalignment_euler_deg,
        misalignment_angle_deg,
    })
}

fn wrap_deg(a: f64) -> f64 {
    (a + 180.0).rem_euclid(360.0) - 180.0
}

/// Re-expresses a series relative to its first element, so it starts at
/// the identity.
pub fn gauge_align(series: &[RotMat]) -> Vec<RotMat> {
    let Some(first) = series.first() else {
        return Vec::new();
    };
    let inv = first.transpose();
    series.iter().map(|c| inv * *c).collect()
}

/// Per-sample `‖log(Ĉᵀ C)‖` in degrees. Both series must share timestamps
/// (within 1e-9 s) and the same reference frame.
pub fn attitude_error_trace(
    estimated: &[(f64, RotMat)],
    truth: &[(f64, RotMat)],
) -> Result<Vec<f64>> {
    if estimated.len() != truth.len() {
        return Err(Error::LengthMismatch(estimated.len(), truth.len()));
    }
    estimated
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(index, ((te, ce), (tt, ct)))| {
            if (te - tt).abs() > 1e-9 {
                return Err(Error::MisalignedTimestamps { index });
            }
            Ok(ce.angle_to(ct).to_degrees())
        })
        .collect()
}

/// First index from which `values` stays at or below `factor × last`.
pub fn convergence_index(values: &[f64], factor: f64) -> usize {
    let Some(&last) = values.last() else {
        return 0;
    };
    let bound = factor * last;
    values
        .iter()
        .rposition(|&v| v > bound)
        .map_or(0, |i| i + 1)
        .min(values.len() - 1)
}
