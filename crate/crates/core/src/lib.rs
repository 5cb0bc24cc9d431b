//! Gyroscope calibration aided by a magnetometer in a homogeneous field.
//!
//! Pipeline: [`magcal`] fits the magnetometer intrinsics, [`gyrocal`]
//! estimates the gyro scale factors, non-orthogonality, bias and the
//! gyro-to-magnetometer misalignment, [`observability`] checks whether a log
//! carries enough rotation excitation, and [`simulator`] / [`evaluation`]
//! provide synthetic ground truth and quality metrics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evaluation;
pub mod gyrocal;
pub mod log;
pub mod magcal;
pub mod observability;
pub mod rotation;
pub mod serde_util;
pub mod simulator;

pub use error::{Error, ErrorCategory, Result};
pub use gyrocal::{
    run_calibration, CalibrationOptions, CalibrationRun, FilterState, GyroCalibration, NoiseConfig,
};
pub use log::{parse_log, RawLog};
pub use magcal::{MagCalReport, MagIntrinsics};
pub use observability::ExcitationReport;
pub use rotation::{EulerAngles, Mat3, RotMat, Vec3};
pub use simulator::{TrajectoryProfile, TruthConfig};
