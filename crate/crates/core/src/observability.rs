//! Excitation diagnostics for the gyro calibration problem.
//!
//! With the calibrated field `m̂` in the magnetometer frame, its derivative is
//! linear in the unknowns:
//!
//! ```text
//! dm̂/dt = m̂ × (K y + ε) = [yᵀ ⊗ (m̂×), (m̂×)] · [vec K; ε] = M · θ
//! ```
//!
//! The parameters are identifiable exactly when `∫ MᵀM dt` is nonsingular,
//! provided the initial magnetometer frame is taken as the inertial frame.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{skew, Mat3, Vec3, Vec9};

pub type Mat3x12 = SMatrix<f64, 3, 12>;
pub type Mat12 = SMatrix<f64, 12, 12>;
pub type Vec12 = SVector<f64, 12>;

/// Singular values below this fraction of the largest one count as zero.
pub const RANK_TOL: f64 = 1e-10;
/// Condition number above which the CLI warns about weak excitation.
pub const WARN_CONDITION: f64 = 1e6;

/// `M = [yᵀ ⊗ skew(m̂), skew(m̂)]`.
pub fn build_m(y_g: &Vec3, m_hat: &Vec3) -> Mat3x12 {
    let s = skew(m_hat);
    let mut m = Mat3x12::zeros();
    for j in 0..3 {
        m.fixed_view_mut::<3, 3>(0, 3 * j).copy_from(&(s * y_g[j]));
    }
    m.fixed_view_mut::<3, 3>(0, 9).copy_from(&s);
    m
}

/// Stacks `vec K` and `ε` into the 12-parameter vector.
pub fn pack_params(vec_k: &Vec9, eps: &Vec3) -> Vec12 {
    let mut p = Vec12::zeros();
    p.fixed_rows_mut::<9>(0).copy_from(vec_k);
    p.fixed_rows_mut::<3>(9).copy_from(eps);
    p
}

pub fn unpack_params(p: &Vec12) -> (Vec9, Vec3) {
    (
        p.fixed_rows::<9>(0).into_owned(),
        p.fixed_rows::<3>(9).into_owned(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationReport {
    /// `∫ MᵀM dt`, row-major.
    pub gramian: Vec<Vec<f64>>,
    pub rank: usize,
    pub condition_number: f64,
    pub smallest_singular_value: f64,
    /// Integrated absolute body rate per axis (rad).
    pub axes_excited: [f64; 3],
}

impl ExcitationReport {
    pub fn is_full_rank(&self) -> bool {
        self.rank == 12
    }

    pub fn gramian_matrix(&self) -> Mat12 {
        Mat12::from_fn(|i, j| self.gramian[i][j])
    }
}

fn check_series(times: &[f64], mag: &[Vec3], gyro: &[Vec3]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::EmptySeries);
    }
    if mag.len() != times.len() {
        return Err(Error::LengthMismatch(times.len(), mag.len()));
    }
    if gyro.len() != times.len() {
        return Err(Error::LengthMismatch(times.len(), gyro.len()));
    }
    if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::NonMonotonic { index: i + 1 });
    }
    Ok(())
}

/// Sorted (descending) singular values of a symmetric PSD matrix.
fn psd_singular_values(g: &Mat12) -> Vec<f64> {
    let mut s: Vec<f64> = g
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0))
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Excitation Gramian `∫ MᵀM dt` by the trapezoidal rule, with rank and
/// conditioning. `rate_model` maps raw gyro to body rate for the per-axis
/// excitation summary; `None` uses the raw readings.
pub fn gramian(
    times: &[f64],
    mag: &[Vec3],
    gyro: &[Vec3],
    rate_model: Option<(&Mat3, &Vec3)>,
) -> Result<ExcitationReport> {
    check_series(times, mag, gyro)?;
    let mut g = Mat12::zeros();
    let mut axes = [0.0; 3];
    let mtm = |k: usize| {
        let m = build_m(&gyro[k], &mag[k]);
        m.transpose() * m
    };
    let rate = |k: usize| match rate_model {
        Some((km, eps)) => km * gyro[k] + eps,
        None => gyro[k],
    };
    let mut prev = mtm(0);
    for k in 0..times.len().saturating_sub(1) {
        let dt = times[k + 1] - times[k];
        let next = mtm(k + 1);
        g += (prev + next) * (0.5 * dt);
        prev = next;
        let w = rate(k);
        for (a, wi) in axes.iter_mut().zip(w.iter()) {
            *a += wi.abs() * dt;
        }
    }
    g = (g + g.transpose()) * 0.5;

    let sv = psd_singular_values(&g);
    let largest = sv[0];
    let smallest = sv[11];
    let rank = if largest > 0.0 {
        sv.iter().filter(|&&s| s > RANK_TOL * largest).count()
    } else {
        0
    };
    let condition_number = if smallest > 0.0 {
        largest / smallest
    } else {
        f64::INFINITY
    };
    Ok(ExcitationReport {
        gramian: (0..12)
            .map(|i| (0..12).map(|j| g[(i, j)]).collect())
            .collect(),
        rank,
        condition_number,
        smallest_singular_value: smallest,
        axes_excited: axes,
    })
}

/// Gramian-weighted solution `(∫MᵀM)⁻¹ ∫Mᵀ ṁ dt` with `ṁ` from central
/// differences.
///
/// Differentiating noisy magnetometer data amplifies the noise, so this is a
/// verification path for clean data rather than an estimator. The gyro value
/// at an interior sample is the average of the two adjacent interval rates.
pub fn solve_closed_form(times: &[f64], mag: &[Vec3], gyro: &[Vec3]) -> Result<(Vec9, Vec3)> {
    check_series(times, mag, gyro)?;
    let n = times.len();
    if n < 3 {
        return Err(Error::EmptySeries);
    }
    let mut lhs = Mat12::zeros();
    let mut rhs = Vec12::zeros();
    for k in 1..n - 1 {
        let dm = (mag[k + 1] - mag[k - 1]) / (times[k + 1] - times[k - 1]);
        let y = (gyro[k - 1] + gyro[k]) * 0.5;
        let m = build_m(&y, &mag[k]);
        let w = 0.5 * (times[k + 1] - times[k - 1]);
        lhs += m.transpose() * m * w;
        rhs += m.transpose() * dm * w;
    }
    let sv = psd_singular_values(&lhs);
    if sv[0] <= 0.0 || sv[11] <= RANK_TOL * sv[0] {
        return Err(Error::Singular("excitation Gramian"));
    }
    let sol = lhs
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or(Error::Singular("excitation Gramian"))?;
    Ok(unpack_params(&sol))
}
