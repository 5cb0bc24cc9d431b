//! Run configuration, read from TOML. Every field has a default, so an empty
//! file (or no file at all) reproduces the reference simulation scenario.

use std::path::{Path, PathBuf};

use gyromag::gyrocal::{CalibrationOptions, NoiseConfig};
use gyromag::rotation::{euler_to_dcm, EulerAngles, Vec3};
use gyromag::serde_util::{mat_to_rows, rows_to_mat};
use gyromag::simulator::{MagNoiseDomain, TrajectoryProfile, TruthConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Where the magnetometer intrinsics used by gyro calibration come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MagSource {
    /// Ellipsoid fit on the log itself.
    Fit,
    /// Previously written `magcal.json`.
    File,
    /// Simulation truth (only when the truth is known).
    Truth,
    /// Magnetometer data is already calibrated.
    Identity,
}

impl MagSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            MagSource::Fit => "fit",
            MagSource::File => "file",
            MagSource::Truth => "truth",
            MagSource::Identity => "identity",
        }
    }
}

/// Simulation truth in report units (degrees, deg/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthSection {
    pub k_g: [[f64; 3]; 3],
    pub bias_deg_s: [f64; 3],
    /// Roll, pitch, yaw of `C_b^m` (ZYX).
    pub misalignment_deg: [f64; 3],
    pub mag_r: [[f64; 3]; 3],
    pub mag_h: [f64; 3],
    pub soft_iron_deg: [f64; 3],
    pub field_dip_deg: f64,
    pub field_azimuth_deg: f64,
    /// deg/s/√Hz
    pub gyro_noise_density: f64,
    pub mag_noise_std: f64,
    pub mag_noise_domain: MagNoiseDomain,
    pub sample_rate: f64,
    pub duration: f64,
    pub earth_rotation: bool,
}

impl Default for TruthSection {
    fn default() -> Self {
        let t = TruthConfig::reference();
        Self {
            k_g: mat_to_rows(&t.k_g),
            bias_deg_s: [1.0, 3.0, 2.0],
            misalignment_deg: [10.0, 20.0, 15.0],
            mag_r: mat_to_rows(&t.mag_r),
            mag_h: t.mag_h.into(),
            soft_iron_deg: [2.0, -1.0, 3.0],
            field_dip_deg: 50.0,
            field_azimuth_deg: 0.0,
            gyro_noise_density: 0.02,
            mag_noise_std: t.mag_noise_std,
            mag_noise_domain: t.mag_noise_domain,
            sample_rate: t.sample_rate,
            duration: t.duration,
            earth_rotation: false,
        }
    }
}

impl TruthSection {
    pub fn to_truth(&self) -> CliResult<TruthConfig> {
        let euler = |a: [f64; 3]| euler_to_dcm(&EulerAngles::from_degrees(a[0], a[1], a[2]));
        let (dip, az) = (
            self.field_dip_deg.to_radians(),
            self.field_azimuth_deg.to_radians(),
        );
        let truth = TruthConfig {
            k_g: rows_to_mat(&self.k_g),
            eps_b: Vec3::from(self.bias_deg_s).map(f64::to_radians),
            c_b_m: euler(self.misalignment_deg),
            mag_r: rows_to_mat(&self.mag_r),
            mag_h: self.mag_h.into(),
            soft_iron_q: euler(self.soft_iron_deg),
            m_e: Vec3::new(dip.cos() * az.cos(), dip.cos() * az.sin(), dip.sin()),
            gyro_noise_density: self.gyro_noise_density.to_radians(),
            mag_noise_std: self.mag_noise_std,
            mag_noise_domain: self.mag_noise_domain,
            sample_rate: self.sample_rate,
            duration: self.duration,
            include_earth_rotation: self.earth_rotation,
            ..TruthConfig::reference()
        };
        truth.validate()?;
        Ok(truth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Monte Carlo run count.
    pub runs: usize,
    pub output: PathBuf,
    /// Input log for calibrate / evaluate.
    pub log: Option<PathBuf>,
    /// Truth sidecar for evaluate; defaults to `<output>/truth.json`.
    pub truth_file: Option<PathBuf>,
    /// Calibration artifact for evaluate; defaults to `<output>/calibration.json`.
    pub calibration_file: Option<PathBuf>,
    /// Magnetometer intrinsics file for `mag_source = "file"`; defaults to
    /// `<output>/magcal.json`.
    pub magcal_file: Option<PathBuf>,
    /// Defaults to `fit` for calibration and `truth` for Monte Carlo.
    pub mag_source: Option<MagSource>,
    pub truth: TruthSection,
    /// Custom excitation profile; the default profile is used when absent.
    pub trajectory: Option<TrajectoryProfile>,
    /// Filter tuning. When absent, simulated runs use noise matched to the
    /// truth and log calibration uses the built-in defaults.
    pub noise: Option<NoiseConfig>,
    pub calibration: CalibrationOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 50,
            output: PathBuf::from("out"),
            log: None,
            truth_file: None,
            calibration_file: None,
            magcal_file: None,
            mag_source: None,
            truth: TruthSection::default(),
            trajectory: None,
            noise: None,
            calibration: CalibrationOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::InvalidConfig(message) => CliError::Config {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| CliError::InvalidConfig(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.runs == 0 {
            return Err(CliError::InvalidConfig("runs must be at least 1".into()));
        }
        if let Some(noise) = &self.noise {
            noise.validate()?;
        }
        let c = &self.calibration;
        if !(c.init_interval > 0.0
            && c.stationary_threshold >= 0.0
            && c.stationary_min_duration >= 0.0)
        {
            return Err(CliError::InvalidConfig(
                "calibration: init_interval must be positive, thresholds nonnegative".into(),
            ));
        }
        if let Some(p) = &self.trajectory {
            p.validate()?;
        }
        Ok(())
    }

    pub fn truth_config(&self) -> CliResult<TruthConfig> {
        self.truth.to_truth()
    }

    pub fn profile(&self, truth: &TruthConfig) -> TrajectoryProfile {
        self.trajectory
            .clone()
            .unwrap_or_else(|| TrajectoryProfile::default_for(truth.duration))
    }

    pub fn output_file(&self, name: &str) -> PathBuf {
        self.output.join(name)
    }

    /// SHA-256 over the canonical JSON form of the resolved configuration.
    /// The output directory is left out: it does not affect any result.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        sha256_hex(&json)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
