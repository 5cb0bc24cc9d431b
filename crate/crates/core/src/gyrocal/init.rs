//! Batch least-squares starting point for the filter.
//!
//! Integrating `dm̂/dt = M θ` over consecutive intervals removes the need to
//! differentiate the magnetometer signal:
//! `m̂(t_{k+1}) − m̂(t_k) = (∫ M dt) θ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observability::{build_m, unpack_params, Mat12};
use crate::rotation::{unvec9, Mat3, Vec3};

/// Fewer intervals than unknowns cannot be trusted even if the rank is 12.
pub const MIN_INTERVALS: usize = 12;
/// Stacked-system condition number beyond which initialization is refused.
pub const MAX_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitEstimate {
    #[serde(with = "crate::serde_util::mat3")]
    pub k: Mat3,
    #[serde(with = "crate::serde_util::vec3")]
    pub eps: Vec3,
    /// RMS of the stacked equation errors.
    pub residual: f64,
    pub condition_number: f64,
    pub intervals: usize,
    /// `σ̂² (AᵀA)⁻¹` over `[vec K, ε]`, with `σ̂` from the residual.
    #[serde(skip)]
    pub covariance: Mat12,
}

impl InitEstimate {
    /// One-sigma uncertainty of `K` entries from [`InitEstimate::covariance`].
    pub fn k_std(&self) -> Mat3 {
        Mat3::from_fn(|i, j| self.covariance[(3 * j + i, 3 * j + i)].sqrt())
    }

    /// One-sigma uncertainty of `ε` (rad/s).
    pub fn eps_std(&self) -> Vec3 {
        Vec3::from_fn(|i, _| self.covariance[(9 + i, 9 + i)].sqrt())
    }
}

/// Split `times` into consecutive index windows spanning at least `interval`
/// seconds each. A short tail is dropped.
fn windows(times: &[f64], interval: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for j in 1..times.len() {
        if times[j] - times[start] >= interval * (1.0 - 1e-9) {
            out.push((start, j));
            start = j;
        }
    }
    out
}

/// Least-squares `(K, ε)` from interval-integrated field increments.
///
/// Within each interval, `∫ M dt` uses the trapezoidal rule on the field with
/// the gyro reading held over its own sample interval.
pub fn init_least_squares(
    times: &[f64],
    mag: &[Vec3],
    gyro: &[Vec3],
    interval: f64,
) -> Result<InitEstimate> {
    if times.is_empty() {
        return Err(Error::EmptySeries);
    }
    if mag.len() != times.len() || gyro.len() != times.len() {
        return Err(Error::LengthMismatch(mag.len(), gyro.len()));
    }
    if !(interval > 0.0) {
        return Err(Error::InvalidConfig(format!("init interval {interval}")));
    }
    let wins = windows(times, interval);
    if wins.len() < MIN_INTERVALS {
        return Err(Error::TooFewIntervals {
            needed: MIN_INTERVALS,
            got: wins.len(),
        });
    }

    let rows = 3 * wins.len();
    let mut a = DMatrix::<f64>::zeros(rows, 12);
    let mut b = DVector::<f64>::zeros(rows);
    for (w, &(s, e)) in wins.iter().enumerate() {
        let mut block = nalgebra::SMatrix::<f64, 3, 12>::zeros();
        for i in s..e {
            let dt = times[i + 1] - times[i];
            let mid = (mag[i] + mag[i + 1]) * 0.5;
            block += build_m(&gyro[i], &mid) * dt;
        }
        a.view_mut((3 * w, 0), (3, 12)).copy_from(&block);
        b.rows_mut(3 * w, 3).copy_from(&(mag[e] - mag[s]));
    }

    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition_number = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if !(condition_number <= MAX_CONDITION) {
        return Err(Error::InsufficientExcitation {
            condition: condition_number,
        });
    }
    let x = svd
        .solve(&b, 0.0)
        .map_err(|_| Error::Singular("initialization system"))?;
    let sq = (&a * &x - &b).norm_squared();
    let residual = (sq / rows as f64).sqrt();
    let dof = (rows - 12).max(1) as f64;
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let s_inv2 = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / (s * s)));
    let cov = v_t.transpose() * s_inv2 * v_t * (sq / dof);
    let covariance = Mat12::from_fn(|i, j| 0.5 * (cov[(i, j)] + cov[(j, i)]));
    let p = crate::observability::Vec12::from_iterator(x.iter().copied());
    let (vec_k, eps) = unpack_params(&p);
    Ok(InitEstimate {
        k: unvec9(&vec_k),
        eps,
        residual,
        condition_number,
        intervals: wins.len(),
        covariance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_cover_duration() {
        let t: Vec<f64> = (0..=1000).map(|k| k as f64 * 0.01).collect();
        let w = windows(&t, 1.0);
        assert_eq!(w.len(), 10);
        assert_eq!(w[0], (0, 100));
        assert_eq!(w[9], (900, 1000));
    }

    #[test]
    fn too_short_log() {
        let t: Vec<f64> = (0..500).map(|k| k as f64 * 0.01).collect();
        let m = vec![Vec3::x(); 500];
        let g = vec![Vec3::zeros(); 500];
        assert!(matches!(
            init_least_squares(&t, &m, &g, 1.0),
            Err(Error::TooFewIntervals { needed: 12, got: 4 })
        ));
    }

    #[test]
    fn no_rotation_is_insufficient_excitation() {
        let t: Vec<f64> = (0..2000).map(|k| k as f64 * 0.01).collect();
        let m = vec![Vec3::new(0.3, 0.4, 0.866); 2000];
        let g = vec![Vec3::zeros(); 2000];
        assert!(matches!(
            init_least_squares(&t, &m, &g, 1.0),
            Err(Error::InsufficientExcitation { .. })
        ));
    }
}
