//! Synthetic trajectories and sensor data with known ground truth.
//!
//! The trajectory is specified as body angular rate relative to the Earth
//! frame. With Earth rotation disabled the Earth frame is inertial.
//!
//! Gyro rows are written as the constant rate that reproduces the true
//! attitude change over `[t_k, t_{k+1}]` exactly, i.e.
//! `exp(ω̄ dt) = C(t_k)ᵀ C(t_{k+1})`, then corrupted by the sensor model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{attitude_error_trace, convergence_index, gauge_align, CONVERGENCE_FACTOR};
use crate::gyrocal::{run_calibration, CalibrationOptions, GyroCalibration, NoiseConfig};
use crate::log::{LogSample, RawLog};
use crate::magcal::{self, MagIntrinsics};
use crate::rotation::{
    dcm_to_euler, euler_to_dcm, so3_exp, so3_log, EulerAngles, Mat3, RotMat, Vec3,
};

/// Earth rotation rate (rad/s).
pub const EARTH_RATE: f64 = 7.292e-5;
/// Truth attitude is integrated at this multiple of the output rate.
pub const OVERSAMPLE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MagNoiseDomain {
    /// Noise std is in calibrated (unit-field) units.
    #[default]
    Calibrated,
    /// Noise is added to the raw reading.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruthConfig {
    #[serde(with = "crate::serde_util::mat3")]
    pub k_g: Mat3,
    /// rad/s
    #[serde(with = "crate::serde_util::vec3")]
    pub eps_b: Vec3,
    /// Effective gyro-to-magnetometer misalignment, i.e. the quantity the
    /// calibration recovers.
    pub c_b_m: RotMat,
    #[serde(with = "crate::serde_util::mat3")]
    pub mag_r: Mat3,
    #[serde(with = "crate::serde_util::vec3")]
    pub mag_h: Vec3,
    /// Soft-iron rotation between the physical and equivalent magnetometer
    /// frames. Only the physical mounting `Q · C_b^m` depends on it.
    pub soft_iron_q: RotMat,
    /// Unit field in the Earth frame.
    #[serde(with = "crate::serde_util::vec3")]
    pub m_e: Vec3,
    /// rad/s/√Hz
    pub gyro_noise_density: f64,
    pub mag_noise_std: f64,
    pub mag_noise_domain: MagNoiseDomain,
    /// Hz
    pub sample_rate: f64,
    /// s
    pub duration: f64,
    pub include_earth_rotation: bool,
    /// Earth rotation axis in the Earth frame.
    #[serde(with = "crate::serde_util::vec3")]
    pub earth_axis: Vec3,
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl TruthConfig {
    /// Reference scenario: 100 s at 100 Hz, `K_g` with 1.1/1.2/1.3 scale
    /// factors, bias (1, 3, 2) deg/s, misalignment (10, 20, 15) deg.
    pub fn reference() -> Self {
        let dip = 50f64.to_radians();
        Self {
            k_g: Mat3::new(1.1, 0.1, 0.15, 0.0, 1.2, 0.2, 0.0, 0.0, 1.3),
            eps_b: Vec3::new(1.0, 3.0, 2.0) * 1f64.to_radians(),
            c_b_m: euler_to_dcm(&EulerAngles::from_degrees(10.0, 20.0, 15.0)),
            mag_r: Mat3::new(1.2, 0.05, -0.03, 0.0, 0.9, 0.04, 0.0, 0.0, 1.1),
            mag_h: Vec3::new(0.3, -0.2, 0.5),
            soft_iron_q: euler_to_dcm(&EulerAngles::from_degrees(2.0, -1.0, 3.0)),
            m_e: Vec3::new(dip.cos(), 0.0, dip.sin()),
            gyro_noise_density: 0.02f64.to_radians(),
            mag_noise_std: 0.01,
            mag_noise_domain: MagNoiseDomain::Calibrated,
            sample_rate: 100.0,
            duration: 100.0,
            include_earth_rotation: false,
            earth_axis: Vec3::z(),
        }
    }

    /// Ideal sensors: identity gain, no bias, no misalignment, no noise.
    pub fn perfect() -> Self {
        Self {
            k_g: Mat3::identity(),
            eps_b: Vec3::zeros(),
            c_b_m: RotMat::identity(),
            mag_r: Mat3::identity(),
            mag_h: Vec3::zeros(),
            soft_iron_q: RotMat::identity(),
            gyro_noise_density: 0.0,
            mag_noise_std: 0.0,
            ..Self::reference()
        }
    }

    pub fn noise_free(mut self) -> Self {
        self.gyro_noise_density = 0.0;
        self.mag_noise_std = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if (self.m_e.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("m_e must have unit norm".into()));
        }
        if !(self.sample_rate > 0.0) || !(self.duration > 0.0) {
            return Err(Error::InvalidConfig(
                "sample_rate and duration must be positive".into(),
            ));
        }
        if !(self.gyro_noise_density >= 0.0) || !(self.mag_noise_std >= 0.0) {
            return Err(Error::InvalidConfig(
                "noise levels must be nonnegative".into(),
            ));
        }
        let k = &self.k_g;
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(Error::InvalidConfig("k_g must be upper triangular".into()));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0 && k[(2, 2)] > 0.0) {
            return Err(Error::InvalidConfig("k_g diagonal must be positive".into()));
        }
        MagIntrinsics::new(self.mag_r, self.mag_h)?;
        if self.include_earth_rotation && (self.earth_axis.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(
                "earth_axis must have unit norm".into(),
            ));
        }
        Ok(())
    }

    pub fn mag_intrinsics(&self) -> MagIntrinsics {
        MagIntrinsics {
            r: self.mag_r,
            h: self.mag_h,
        }
    }

    /// Gyro calibration as the estimator would ideally report it.
    pub fn gyro_calibration(&self) -> GyroCalibration {
        let k = self.c_b_m * self.k_g;
        GyroCalibration {
            k_g: self.k_g,
            eps_b: self.eps_b,
            c_b_m: self.c_b_m,
            k,
            eps: self.c_b_m * self.eps_b,
            m_i: self.m_e,
            final_covariance_diag: vec![0.0; crate::gyrocal::STATE_DIM],
        }
    }

    /// Filter tuning matched to this configuration's noise levels.
    pub fn matched_noise(&self) -> NoiseConfig {
        NoiseConfig {
            gyro_noise_density: self.gyro_noise_density,
            mag_noise_std: self.mag_noise_std.max(1e-3),
            ..NoiseConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RatePrimitive {
    /// `amplitude · sin(2π·frequency·(t − start) + phase)` on one axis,
    /// optionally multiplied by a Hann window over `[start, end]`.
    Sinusoid {
        axis: usize,
        amplitude: f64,
        frequency: f64,
        phase: f64,
        start: f64,
        end: f64,
        taper: bool,
    },
    Constant {
        axis: usize,
        rate: f64,
        start: f64,
        end: f64,
    },
    /// Forces all rates to zero inside the window.
    Rest { start: f64, end: f64 },
}

impl RatePrimitive {
    fn window(&self) -> (f64, f64) {
        match *self {
            RatePrimitive::Sinusoid { start, end, .. }
            | RatePrimitive::Constant { start, end, .. }
            | RatePrimitive::Rest { start, end } => (start, end),
        }
    }

    fn contains(&self, t: f64) -> bool {
        let (s, e) = self.window();
        t >= s && t < e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryProfile {
    pub primitives: Vec<RatePrimitive>,
    /// When set to `[a, b]`, the second half of the window replays the first
    /// half backwards with negated rates, so the attitude at `b` equals the
    /// attitude at `a`.
    pub mirror: Option<[f64; 2]>,
    /// Bound on any single-axis rate (rad/s).
    pub max_rate: f64,
}

impl Default for TrajectoryProfile {
    fn default() -> Self {
        Self::default_for(100.0)
    }
}

impl TrajectoryProfile {
    pub fn rest() -> Self {
        Self {
            primitives: Vec::new(),
            mirror: None,
            max_rate: 10.0,
        }
    }

    /// Tapered three-axis sinusoidal excitation between 2 s rests, mirrored
    /// so the body returns to its starting pose.
    pub fn default_for(duration: f64) -> Self {
        let rest = 2.0;
        let a = rest;
        let b = duration - rest;
        let mid = 0.5 * (a + b);
        let sin = |axis, amp_deg: f64, period: f64, phase: f64| RatePrimitive::Sinusoid {
            axis,
            amplitude: amp_deg.to_radians(),
            frequency: 1.0 / period,
            phase,
            start: a,
            end: mid,
            taper: true,
        };
        Self {
            primitives: vec![
                sin(0, 45.0, 7.0, 0.0),
                sin(1, 55.0, 11.0, 1.0),
                sin(2, 60.0, 17.0, 2.0),
                sin(0, 25.0, 5.0, 0.5),
                sin(2, 30.0, 9.0, 0.0),
            ],
            mirror: Some([a, b]),
            max_rate: 5.0,
        }
    }

    /// Single-axis sinusoid about `axis` (body frame, unit vector).
    pub fn single_axis(axis: Vec3, amplitude: f64, period: f64, duration: f64) -> Self {
        let axis = axis.normalize();
        let primitives = (0..3)
            .filter(|&i| axis[i] != 0.0)
            .map(|i| RatePrimitive::Sinusoid {
                axis: i,
                amplitude: amplitude * axis[i],
                frequency: 1.0 / period,
                phase: 0.0,
                start: 0.0,
                end: duration,
                taper: false,
            })
            .collect();
        Self {
            primitives,
            mirror: None,
            max_rate: amplitude.abs() + 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut peak = [0.0f64; 3];
        for p in &self.primitives {
            let (s, e) = p.window();
            if !(e > s) {
                return Err(Error::InvalidConfig(format!(
                    "empty primitive window [{s}, {e}]"
                )));
            }
            match *p {
                RatePrimitive::Sinusoid {
                    axis, amplitude, ..
                } => {
                    check_axis(axis)?;
                    peak[axis] += amplitude.abs();
                }
                RatePrimitive::Constant { axis, rate, .. } => {
                    check_axis(axis)?;
                    peak[axis] += rate.abs();
                }
                RatePrimitive::Rest { .. } => {}
            }
        }
        if peak.iter().any(|&p| p > self.max_rate) {
            return Err(Error::InvalidConfig(format!(
                "profile rate bound {:?} exceeds max_rate {}",
                peak, self.max_rate
            )));
        }
        if let Some([a, b]) = self.mirror {
            if !(b > a) {
                return Err(Error::InvalidConfig("mirror window must have b > a".into()));
            }
        }
        Ok(())
    }

    fn raw_rate(&self, t: f64) -> Vec3 {
        let mut w = Vec3::zeros();
        for p in &self.primitives {
            if !p.contains(t) {
                continue;
            }
            match *p {
                RatePrimitive::Sinusoid {
                    axis,
                    amplitude,
                    frequency,
                    phase,
                    start,
                    end,
                    taper,
                } => {
                    let arg = std::f64::consts::TAU * frequency * (t - start) + phase;
                    let mut v = amplitude * arg.sin();
                    if taper {
                        v *= (std::f64::consts::PI * (t - start) / (end - start))
                            .sin()
                            .powi(2);
                    }
                    w[axis] += v;
                }
                RatePrimitive::Constant { axis, rate, .. } => w[axis] += rate,
                RatePrimitive::Rest { .. } => return Vec3::zeros(),
            }
        }
        w
    }

    /// Body rate relative to the Earth frame at time `t`.
    pub fn rate(&self, t: f64) -> Vec3 {
        if let Some([a, b]) = self.mirror {
            let mid = 0.5 * (a + b);
            if t >= mid && t < b {
                return -self.raw_rate(a + b - t);
            }
        }
        self.raw_rate(t)
    }
}

fn check_axis(axis: usize) -> Result<()> {
    if axis > 2 {
        return Err(Error::InvalidConfig(format!(
            "axis index {axis} out of range"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Instantaneous body rate relative to Earth.
    pub rates: Vec<Vec3>,
    /// Body-to-Earth attitude `C_b^e`.
    pub attitudes: Vec<RotMat>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Integrated |rate| per body axis (rad).
    pub fn axis_excitation(&self) -> [f64; 3] {
        let mut out = [0.0; 3];
        for k in 0..self.len().saturating_sub(1) {
            let dt = self.times[k + 1] - self.times[k];
            let avg = (self.rates[k].abs() + self.rates[k + 1].abs()) * 0.5;
            for i in 0..3 {
                out[i] += avg[i] * dt;
            }
        }
        out
    }
}

/// Integrates the profile with midpoint steps at `OVERSAMPLE×` the sample
/// rate and keeps every `OVERSAMPLE`-th attitude. Sample times are
/// `k / sample_rate` for `k = 0..=round(duration·rate)`.
pub fn generate_trajectory(
    profile: &TrajectoryProfile,
    config: &TruthConfig,
) -> Result<Trajectory> {
    profile.validate()?;
    config.validate()?;
    let n = (config.duration * config.sample_rate).round() as usize;
    let dt = 1.0 / config.sample_rate;
    let h = dt / OVERSAMPLE as f64;

    let mut times = Vec::with_capacity(n + 1);
    let mut rates = Vec::with_capacity(n + 1);
    let mut attitudes = Vec::with_capacity(n + 1);
    let mut c = RotMat::identity();
    for k in 0..=n {
        let t = k as f64 * dt;
        times.push(t);
        rates.push(profile.rate(t));
        attitudes.push(c);
        if k == n {
            break;
        }
        for j in 0..OVERSAMPLE {
            let s = (k * OVERSAMPLE + j) as f64 * h + 0.5 * h;
            c = c * so3_exp(&(profile.rate(s) * h));
        }
        if (k + 1) % 1000 == 0 {
            c = RotMat::orthonormalize(c.matrix());
        }
    }
    Ok(Trajectory {
        times,
        rates,
        attitudes,
    })
}

/// Earth-to-inertial rotation at time `t`.
fn earth_to_inertial(config: &TruthConfig, t: f64) -> RotMat {
    if config.include_earth_rotation {
        so3_exp(&(config.earth_axis * (EARTH_RATE * t)))
    } else {
        RotMat::identity()
    }
}

/// Body-to-inertial attitudes `C_b^i`.
pub fn inertial_attitudes(traj: &Trajectory, config: &TruthConfig) -> Vec<RotMat> {
    traj.times
        .iter()
        .zip(&traj.attitudes)
        .map(|(&t, c)| earth_to_inertial(config, t) * *c)
        .collect()
}

/// True magnetometer-to-inertial attitudes `C_m^i = C_b^i (C_b^m)ᵀ`.
pub fn true_mag_attitudes(traj: &Trajectory, config: &TruthConfig) -> Vec<RotMat> {
    inertial_attitudes(traj, config)
        .into_iter()
        .map(|c| c * config.c_b_m.transpose())
        .collect()
}

/// Interval-equivalent inertial body rates (gyro frame, rad/s).
pub fn interval_rates(traj: &Trajectory, config: &TruthConfig) -> Vec<Vec3> {
    let ci = inertial_attitudes(traj, config);
    let n = traj.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        if k + 1 < n {
            let dt = traj.times[k + 1] - traj.times[k];
            let phi = so3_log(&(ci[k].transpose() * ci[k + 1])).expect("sub-π step");
            out.push(phi / dt);
        } else {
            let earth = if config.include_earth_rotation {
                ci[k].transpose() * config.earth_axis * EARTH_RATE
            } else {
                Vec3::zeros()
            };
            out.push(traj.rates[k] + earth);
        }
    }
    out
}

/// Noise-free calibrated field in the equivalent magnetometer frame.
pub fn true_calibrated_field(traj: &Trajectory, config: &TruthConfig) -> Vec<Vec3> {
    // Physical magnetometer orientation C_e^{m*} = Q C_b^m C_e^b; the soft-iron
    // rotation Qᵀ maps back to the equivalent frame.
    traj.attitudes
        .iter()
        .map(|c_b_e| {
            let c_e_mstar = config.soft_iron_q * config.c_b_m * c_b_e.transpose();
            config.soft_iron_q.transpose() * (c_e_mstar * config.m_e)
        })
        .collect()
}

pub fn synthesize(traj: &Trajectory, config: &TruthConfig, seed: u64) -> Result<RawLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synthesize_with_rng(traj, config, &mut rng)
}

/// Sensor model: `y_g = K_g⁻¹(ω − ε_b) + n_g` with per-sample std
/// `density·√rate`, and `y_m = R⁻¹ m^m + h` with noise in the configured
/// domain. Draw order per sample: three gyro, then three magnetometer.
pub fn synthesize_with_rng<R: Rng>(
    traj: &Trajectory,
    config: &TruthConfig,
    rng: &mut R,
) -> Result<RawLog> {
    config.validate()?;
    let kg_inv = config
        .k_g
        .try_inverse()
        .ok_or(Error::InvalidConfig("k_g is singular".into()))?;
    let r_inv = config
        .mag_r
        .try_inverse()
        .ok_or(Error::InvalidConfig("mag_r is singular".into()))?;
    let gyro_std = config.gyro_noise_density * config.sample_rate.sqrt();
    let rates = interval_rates(traj, config);
    let fields = true_calibrated_field(traj, config);

    let gauss = |std: f64, rng: &mut R| -> Vec3 {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        v * std
    };

    let mut samples = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        let n_g = gauss(gyro_std, rng);
        let n_m = gauss(config.mag_noise_std, rng);
        let gyro = kg_inv * (rates[k] - config.eps_b) + n_g;
        let mag = match config.mag_noise_domain {
            MagNoiseDomain::Calibrated => r_inv * (fields[k] + n_m) + config.mag_h,
            MagNoiseDomain::Raw => r_inv * fields[k] + config.mag_h + n_m,
        };
        samples.push(LogSample {
            t: traj.times[k],
            gyro,
            mag,
        });
    }
    Ok(RawLog::new(samples, "simulator"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MagSource {
    /// Use the true intrinsics (magnetometer assumed well calibrated).
    #[default]
    Truth,
    /// Fit intrinsics from each run's own data.
    Fit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloOptions {
    pub noise: NoiseConfig,
    pub calibration: CalibrationOptions,
    pub mag_source: MagSource,
}

impl MonteCarloOptions {
    pub fn for_truth(config: &TruthConfig) -> Self {
        Self {
            noise: config.matched_noise(),
            calibration: CalibrationOptions {
                record_trace: true,
                ..CalibrationOptions::default()
            },
            mag_source: MagSource::Truth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub calibration: GyroCalibration,
    /// Largest attitude error (deg) after the attitude covariance settles.
    pub max_attitude_error_deg: f64,
    /// Time at which the attitude covariance settled (s).
    pub convergence_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub index: u64,
    pub result: Result<RunResult, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub mean: Vec<f64>,
    /// Sample standard deviation; absent with fewer than two runs.
    pub std: Option<Vec<f64>>,
}

impl ParamStats {
    fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mean: Vec<f64> = (0..width)
            .map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n as f64)
            .collect();
        let std = (n >= 2).then(|| {
            (0..width)
                .map(|i| {
                    let ss: f64 = rows.iter().map(|r| (r[i] - mean[i]).powi(2)).sum();
                    (ss / (n - 1) as f64).sqrt()
                })
                .collect()
        });
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub runs_ok: usize,
    pub runs_failed: usize,
    /// Row-major `K_g`.
    pub k_g: ParamStats,
    /// deg/s
    pub eps_b_deg: ParamStats,
    /// ZYX roll/pitch/yaw of `C_b^m` (deg).
    pub misalignment_deg: ParamStats,
    pub max_attitude_error_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub runs: Vec<RunOutcome>,
    pub summary: MonteCarloSummary,
}

/// RNG for run `index`: ChaCha8 seeded with `base_seed` on stream `index`.
pub fn run_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index);
    rng
}

/// Simulates and calibrates one run.
pub fn simulate_run(
    traj: &Trajectory,
    config: &TruthConfig,
    options: &MonteCarloOptions,
    rng: &mut ChaCha8Rng,
) -> Result<RunResult> {
    let log = synthesize_with_rng(traj, config, rng)?;
    let intrinsics = match options.mag_source {
        MagSource::Truth => config.mag_intrinsics(),
        MagSource::Fit => magcal::calibrate(&log.mag())?.intrinsics,
    };
    let mut cal_opts = options.calibration;
    cal_opts.record_trace = true;
    let run = run_calibration(&log, &intrinsics, &options.noise, &cal_opts)?;

    let (start, end) = run.diagnostics.used_range;
    let truth = gauge_align(&true_mag_attitudes(traj, config)[start..end]);
    let est: Vec<(f64, RotMat)> = run.trace.iter().map(|s| (s.t, s.c_m_i)).collect();
    let truth_series: Vec<(f64, RotMat)> =
        traj.times[start..end].iter().copied().zip(truth).collect();
    let errors = attitude_error_trace(&est, &truth_series)?;
    let variances: Vec<f64> = run.trace.iter().map(|s| s.attitude_variance()).collect();
    let settled = convergence_index(&variances, CONVERGENCE_FACTOR);
    let max_err = errors[settled..].iter().copied().fold(0.0, f64::max);
    Ok(RunResult {
        calibration: run.calibration,
        max_attitude_error_deg: max_err,
        convergence_time: run.trace[settled].t - run.trace[0].t,
    })
}

/// Runs `n_runs` independent simulations in parallel and summarizes the
/// recovered parameters. Failed runs are reported and left out of the
/// statistics.
pub fn monte_carlo(
    config: &TruthConfig,
    profile: &TrajectoryProfile,
    n_runs: usize,
    base_seed: u64,
    options: &MonteCarloOptions,
) -> Result<MonteCarloResult> {
    if n_runs == 0 {
        return Err(Error::InvalidConfig("n_runs must be at least 1".into()));
    }
    let traj = generate_trajectory(profile, config)?;
    let runs: Vec<RunOutcome> = (0..n_runs as u64)
        .into_par_iter()
        .map(|index| {
            let mut rng = run_rng(base_seed, index);
            RunOutcome {
                index,
                result: simulate_run(&traj, config, options, &mut rng).map_err(|e| e.to_string()),
            }
        })
        .collect();
    let summary = summarize(&runs);
    Ok(MonteCarloResult { runs, summary })
}

pub fn summarize(runs: &[RunOutcome]) -> MonteCarloSummary {
    let ok: Vec<&RunResult> = runs.iter().filter_map(|r| r.result.as_ref().ok()).collect();
    let kg: Vec<Vec<f64>> = ok
        .iter()
        .map(|r| {
            let m = r.calibration.k_g;
            (0..3)
                .flat_map(|i| (0..3).map(move |j| m[(i, j)]))
                .collect()
        })
        .collect();
    let eps: Vec<Vec<f64>> = ok
        .iter()
        .map(|r| r.calibration.eps_b.iter().map(|v| v.to_degrees()).collect())
        .collect();
    let eul: Vec<Vec<f64>> = ok
        .iter()
        .map(|r| {
            dcm_to_euler(&r.calibration.c_b_m)
                .map(|e| e.to_degrees().to_vec())
                .unwrap_or_else(|_| vec![f64::NAN; 3])
        })
        .collect();
    MonteCarloSummary {
        runs_ok: ok.len(),
        runs_failed: runs.len() - ok.len(),
        k_g: ParamStats::from_rows(&kg),
        eps_b_deg: ParamStats::from_rows(&eps),
        misalignment_deg: ParamStats::from_rows(&eul),
        max_attitude_error_deg: ok
            .iter()
            .map(|r| r.max_attitude_error_deg)
            .fold(0.0, f64::max),
    }
}
