//! Gyroscope calibration against a homogeneous magnetic field.
//!
//! The magnetometer (already intrinsically calibrated) provides a constant
//! reference vector. A batch least-squares fit seeds an error-state EKF that
//! estimates the magnetometer attitude, the combined gain `K = C_b^m K_g`,
//! the equivalent bias `ε = C_b^m ε_b` and the inertial field `m_i`.
//! The gyro parameters follow from a QR factorization of `K`.

mod filter;
mod init;

use serde::{Deserialize, Serialize};

pub use filter::{
    measurement_jacobian, propagate, propagate_mean, transition_jacobians, update, FilterState,
    Mat18, UpdateOutcome, Vec18, ATT, BIAS, FIELD, GAIN, GATE, MAX_STEP, STATE_DIM,
};
pub use init::{init_least_squares, InitEstimate, MAX_CONDITION, MIN_INTERVALS};

use crate::error::{Error, Result};
use crate::log::RawLog;
use crate::magcal::MagIntrinsics;
use crate::rotation::{qr_posdiag, Mat3, RotMat, Vec3};

/// Added in quadrature to the least-squares prior so that a near-exact fit
/// still leaves the filter room to refine.
pub const PRIOR_FLOOR_K: f64 = 1e-3;
/// rad/s
pub const PRIOR_FLOOR_EPS: f64 = 1e-4;

/// Filter tuning. Densities are per second; standard deviations are in the
/// units of the corresponding state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Gyro white-noise density (rad/s/√Hz).
    pub gyro_noise_density: f64,
    /// Calibrated magnetometer noise std (unitless).
    pub mag_noise_std: f64,
    pub init_attitude_std: f64,
    /// Prior std of `K` entries. When absent the least-squares covariance
    /// (scaled by `init_inflation`) seeds the gain and bias block.
    pub init_k_std: Option<f64>,
    /// rad/s; see `init_k_std`.
    pub init_eps_std: Option<f64>,
    /// Variance multiplier on the least-squares covariance.
    pub init_inflation: f64,
    /// Defaults to `mag_noise_std` when absent.
    pub init_field_std: Option<f64>,
    /// Random-walk variance rates (state units² per second).
    pub k_random_walk: f64,
    pub eps_random_walk: f64,
    pub field_random_walk: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            gyro_noise_density: 0.02_f64.to_radians(),
            mag_noise_std: 0.01,
            init_attitude_std: 1e-6,
            init_k_std: None,
            init_eps_std: None,
            init_inflation: 1.0,
            init_field_std: None,
            k_random_walk: 0.0,
            eps_random_walk: 0.0,
            field_random_walk: 1e-12,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.gyro_noise_density,
            self.mag_noise_std,
            self.init_attitude_std,
            self.init_k_std.unwrap_or(0.0),
            self.init_eps_std.unwrap_or(0.0),
            self.init_inflation,
            self.init_field_std.unwrap_or(0.0),
            self.k_random_walk,
            self.eps_random_walk,
            self.field_random_walk,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig(
                "noise parameters must be finite and nonnegative".into(),
            ));
        }
        if self.mag_noise_std <= 0.0 {
            return Err(Error::InvalidConfig(
                "mag_noise_std must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Prior covariance. `init` supplies the gain and bias block for any of
    /// `init_k_std` / `init_eps_std` left unset.
    pub fn initial_covariance(&self, init: &InitEstimate) -> Mat18 {
        let mut p = Mat18::zeros();
        let mut ls = init.covariance * self.init_inflation;
        for i in 0..12 {
            let floor = if i < 9 {
                PRIOR_FLOOR_K
            } else {
                PRIOR_FLOOR_EPS
            };
            ls[(i, i)] += floor * floor;
        }
        p.fixed_view_mut::<12, 12>(GAIN, GAIN).copy_from(&ls);
        if let Some(std) = self.init_k_std {
            p.fixed_view_mut::<9, 12>(GAIN, GAIN).fill(0.0);
            p.fixed_view_mut::<12, 9>(GAIN, GAIN).fill(0.0);
            for i in 0..9 {
                p[(GAIN + i, GAIN + i)] = std.powi(2);
            }
        }
        if let Some(std) = self.init_eps_std {
            p.fixed_view_mut::<3, 12>(BIAS, GAIN).fill(0.0);
            p.fixed_view_mut::<12, 3>(GAIN, BIAS).fill(0.0);
            for i in 0..3 {
                p[(BIAS + i, BIAS + i)] = std.powi(2);
            }
        }
        let field_std = self.init_field_std.unwrap_or(self.mag_noise_std);
        for i in 0..3 {
            p[(ATT + i, ATT + i)] = self.init_attitude_std.powi(2);
            p[(FIELD + i, FIELD + i)] = field_std.powi(2);
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationOptions {
    /// Length of each least-squares initialization interval (s).
    pub init_interval: f64,
    /// Gyro magnitude (rad/s) under which leading/trailing data is stationary.
    pub stationary_threshold: f64,
    /// Minimum stationary stretch (s) before it is trimmed.
    pub stationary_min_duration: f64,
    /// Initial magnetometer attitude. Any rotation is a valid choice; the
    /// recovered gyro parameters do not depend on it.
    pub initial_frame: RotMat,
    /// Re-project the attitude onto SO(3) every this many steps (0 = never).
    pub reorthonormalize_every: usize,
    pub record_trace: bool,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            init_interval: 1.0,
            stationary_threshold: 0.02,
            stationary_min_duration: 1.0,
            initial_frame: RotMat::identity(),
            reorthonormalize_every: 100,
            record_trace: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GyroCalibration {
    /// Upper-triangular scale / non-orthogonality matrix.
    #[serde(with = "crate::serde_util::mat3")]
    pub k_g: Mat3,
    /// Gyro bias in the gyro frame (rad/s).
    #[serde(with = "crate::serde_util::vec3")]
    pub eps_b: Vec3,
    /// Gyro-to-magnetometer misalignment.
    pub c_b_m: RotMat,
    #[serde(with = "crate::serde_util::mat3")]
    pub k: Mat3,
    #[serde(with = "crate::serde_util::vec3")]
    pub eps: Vec3,
    #[serde(with = "crate::serde_util::vec3")]
    pub m_i: Vec3,
    pub final_covariance_diag: Vec<f64>,
}

impl GyroCalibration {
    /// Calibrated body rate `K_g y + ε_b` in the gyro frame.
    pub fn apply(&self, y_g: &Vec3) -> Vec3 {
        self.k_g * y_g + self.eps_b
    }

    /// Parameters that leave raw readings untouched.
    pub fn identity() -> Self {
        Self {
            k_g: Mat3::identity(),
            eps_b: Vec3::zeros(),
            c_b_m: RotMat::identity(),
            k: Mat3::identity(),
            eps: Vec3::zeros(),
            m_i: Vec3::zeros(),
            final_covariance_diag: vec![0.0; STATE_DIM],
        }
    }
}

/// `[C_b^m, K_g] = qr(K)` and `ε_b = (C_b^m)ᵀ ε`.
pub fn recover_parameters(k: &Mat3, eps: &Vec3) -> Result<(Mat3, Vec3, RotMat)> {
    let (c_b_m, k_g) = qr_posdiag(k)?;
    let eps_b = c_b_m.transpose() * *eps;
    Ok((k_g, eps_b, c_b_m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSample {
    pub t: f64,
    pub c_m_i: RotMat,
    pub k: Mat3,
    pub eps: Vec3,
    pub m_i: Vec3,
    pub p_diag: [f64; STATE_DIM],
}

impl TraceSample {
    fn from_state(t: f64, s: &FilterState) -> Self {
        let mut p_diag = [0.0; STATE_DIM];
        for (i, d) in p_diag.iter_mut().enumerate() {
            *d = s.p[(i, i)];
        }
        Self {
            t,
            c_m_i: s.c_m_i,
            k: s.k,
            eps: s.eps,
            m_i: s.m_i,
            p_diag,
        }
    }

    pub fn attitude_variance(&self) -> f64 {
        self.p_diag[ATT] + self.p_diag[ATT + 1] + self.p_diag[ATT + 2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub init: InitEstimate,
    pub updates: usize,
    pub gated: usize,
    /// Index range of the log actually used after stationary trimming.
    pub used_range: (usize, usize),
    pub max_orthogonality_defect: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRun {
    pub calibration: GyroCalibration,
    pub trace: Vec<TraceSample>,
    pub diagnostics: RunDiagnostics,
    pub final_state: FilterState,
}

/// Range of samples left after removing stationary stretches at both ends.
///
/// A stretch is only removed when it lasts at least `min_duration`. A log
/// that never exceeds the threshold is returned whole.
pub fn trim_stationary(
    times: &[f64],
    gyro: &[Vec3],
    threshold: f64,
    min_duration: f64,
) -> (usize, usize) {
    let n = times.len();
    let moving = |k: usize| gyro[k].norm() >= threshold;
    let Some(first) = (0..n).find(|&k| moving(k)) else {
        return (0, n);
    };
    let last = (0..n).rev().find(|&k| moving(k)).unwrap_or(first);
    let start = if times[first] - times[0] >= min_duration {
        first
    } else {
        0
    };
    // Row `last` covers [t_last, t_last+1], so keep the sample after it.
    let end_keep = (last + 2).min(n);
    let end = if end_keep < n && times[n - 1] - times[end_keep - 1] >= min_duration {
        end_keep
    } else {
        n
    };
    (start, end)
}

/// Full calibration of one log: magnetometer correction, stationary trimming,
/// least-squares initialization, EKF pass and parameter recovery.
pub fn run_calibration(
    log: &RawLog,
    mag_intrinsics: &MagIntrinsics,
    noise: &NoiseConfig,
    options: &CalibrationOptions,
) -> Result<CalibrationRun> {
    if log.is_empty() {
        return Err(Error::EmptySeries);
    }
    if let Some(index) = log.first_non_monotonic() {
        return Err(Error::NonMonotonic { index });
    }
    noise.validate()?;

    let times_all = log.times();
    let gyro_all = log.gyro();
    let (start, end) = trim_stationary(
        &times_all,
        &gyro_all,
        options.stationary_threshold,
        options.stationary_min_duration,
    );
    let times = &times_all[start..end];
    let gyro = &gyro_all[start..end];
    let mag: Vec<Vec3> = log.samples[start..end]
        .iter()
        .map(|s| mag_intrinsics.apply(&s.mag))
        .collect();

    let init = init_least_squares(times, &mag, gyro, options.init_interval)?;

    let frame = options.initial_frame;
    let mut state = FilterState {
        c_m_i: frame,
        k: init.k,
        eps: init.eps,
        m_i: frame * mag[0],
        p: noise.initial_covariance(&init),
    };

    let mut trace = Vec::new();
    if options.record_trace {
        trace.reserve(times.len());
        trace.push(TraceSample::from_state(times[0], &state));
    }
    let mut updates = 0;
    let mut gated = 0;
    let mut max_defect: f64 = 0.0;
    let mut steps = 0usize;

    for k in 1..times.len() {
        let dt = times[k] - times[k - 1];
        let substeps = (dt / MAX_STEP).ceil().max(1.0) as usize;
        let h = dt / substeps as f64;
        for _ in 0..substeps {
            state = propagate(&state, &gyro[k - 1], h, noise)?;
            steps += 1;
            if options.reorthonormalize_every > 0
                && steps.is_multiple_of(options.reorthonormalize_every)
            {
                max_defect = max_defect.max(state.c_m_i.orthogonality_defect());
                state.c_m_i = RotMat::orthonormalize(state.c_m_i.matrix());
            }
        }
        let (next, outcome) = update(&state, &mag[k], noise)?;
        state = next;
        match outcome {
            UpdateOutcome::Applied => updates += 1,
            UpdateOutcome::Gated => gated += 1,
        }
        if !state.is_finite() {
            return Err(Error::FilterDiverged(times[k]));
        }
        if options.record_trace {
            trace.push(TraceSample::from_state(times[k], &state));
        }
    }
    max_defect = max_defect.max(state.c_m_i.orthogonality_defect());

    let (k_g, eps_b, c_b_m) = recover_parameters(&state.k, &state.eps)?;
    let calibration = GyroCalibration {
        k_g,
        eps_b,
        c_b_m,
        k: state.k,
        eps: state.eps,
        m_i: state.m_i,
        final_covariance_diag: (0..STATE_DIM).map(|i| state.p[(i, i)]).collect(),
    };
    Ok(CalibrationRun {
        calibration,
        trace,
        diagnostics: RunDiagnostics {
            init,
            updates,
            gated,
            used_range: (start, end),
            max_orthogonality_defect: max_defect,
        },
        final_state: state,
    })
}
