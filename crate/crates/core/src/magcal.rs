//! Intrinsic magnetometer calibration.
//!
//! Model: `m = R (y − h)` with `‖m‖ = 1`, `R` upper triangular with positive
//! diagonal. The soft-iron rotation between the physical and equivalent
//! magnetometer frames cannot be seen from norms alone; it ends up inside the
//! gyro-to-magnetometer misalignment estimated later.
//!
//! The fit runs in two stages: a linear algebraic quadric fit followed by
//! Cholesky factorization gives a starting point, then Gauss-Newton on
//! `Σ (‖R(y−h)‖ − 1)²` refines all nine parameters. Minimizing the norm
//! residual itself means refinement can only lower the reported RMS.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{Mat3, Vec3};

pub const MIN_SAMPLES: usize = 9;
const MAX_ITERATIONS: usize = 50;
const STEP_TOL: f64 = 1e-10;
const MAX_HALVINGS: usize = 8;

type Mat10 = SMatrix<f64, 10, 10>;
type Vec10 = SVector<f64, 10>;
type Mat9 = SMatrix<f64, 9, 9>;
type Vec9 = SVector<f64, 9>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagIntrinsics {
    /// Upper-triangular shape matrix.
    #[serde(with = "crate::serde_util::mat3")]
    pub r: Mat3,
    /// Hard-iron offset in raw sensor units.
    #[serde(with = "crate::serde_util::vec3")]
    pub h: Vec3,
}

impl Default for MagIntrinsics {
    fn default() -> Self {
        Self::identity()
    }
}

impl MagIntrinsics {
    pub fn identity() -> Self {
        Self {
            r: Mat3::identity(),
            h: Vec3::zeros(),
        }
    }

    pub fn new(r: Mat3, h: Vec3) -> Result<Self> {
        let upper = r[(1, 0)] == 0.0 && r[(2, 0)] == 0.0 && r[(2, 1)] == 0.0;
        let positive = (0..3).all(|i| r[(i, i)] > 0.0);
        if !upper || !positive {
            return Err(Error::InvalidConfig(
                "magnetometer shape matrix must be upper triangular with positive diagonal".into(),
            ));
        }
        Ok(Self { r, h })
    }

    /// Calibrated measurement `R (y − h)`. No normalization is applied.
    pub fn apply(&self, y: &Vec3) -> Vec3 {
        self.r * (y - self.h)
    }

    pub fn apply_all(&self, ys: &[Vec3]) -> Vec<Vec3> {
        ys.iter().map(|y| self.apply(y)).collect()
    }

    fn to_params(self) -> Vec9 {
        let r = self.r;
        Vec9::from_column_slice(&[
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 2)],
            self.h.x,
            self.h.y,
            self.h.z,
        ])
    }

    fn from_params(p: &Vec9) -> Self {
        Self {
            r: Mat3::new(p[0], p[1], p[2], 0.0, p[3], p[4], 0.0, 0.0, p[5]),
            h: Vec3::new(p[6], p[7], p[8]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagCalReport {
    pub intrinsics: MagIntrinsics,
    /// RMS of `‖R(y−h)‖ − 1` over all samples.
    pub norm_residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Condition number of `JᵀJ` at the solution. Large values mean the
    /// samples cover too little of the sphere to pin down all nine
    /// parameters, even when the residual looks fine.
    pub condition_number: f64,
}

/// RMS of the norm residual `‖R(y−h)‖ − 1`.
pub fn norm_residual_rms(intrinsics: &MagIntrinsics, samples: &[Vec3]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let sum: f64 = samples
        .iter()
        .map(|y| (intrinsics.apply(y).norm() - 1.0).powi(2))
        .sum();
    (sum / samples.len() as f64).sqrt()
}

/// Algebraic ellipsoid fit.
///
/// Solves `xᵀAx + 2bᵀx + c = 0` in the homogeneous least-squares sense on
/// centered and scaled data, converts to center form and factors
/// `A / (centerᵀ A center − c) = RᵀR`.
pub fn fit_initial(samples: &[Vec3]) -> Result<MagIntrinsics> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_SAMPLES,
            got: samples.len(),
        });
    }
    if samples.iter().any(|s| !s.iter().all(|v| v.is_finite())) {
        return Err(Error::InvalidConfig(
            "non-finite magnetometer sample".into(),
        ));
    }

    let n = samples.len() as f64;
    let mean = samples.iter().sum::<Vec3>() / n;
    let scale = (samples
        .iter()
        .map(|s| (s - mean).norm_squared())
        .sum::<f64>()
        / n)
        .sqrt();
    if scale <= 0.0 {
        return Err(Error::InsufficientCoverage);
    }

    let mut scatter = Mat10::zeros();
    for s in samples {
        let p = (s - mean) / scale;
        let d = Vec10::from_column_slice(&[
            p.x * p.x,
            p.y * p.y,
            p.z * p.z,
            2.0 * p.x * p.y,
            2.0 * p.x * p.z,
            2.0 * p.y * p.z,
            2.0 * p.x,
            2.0 * p.y,
            2.0 * p.z,
            1.0,
        ]);
        scatter += d * d.transpose();
    }

    let eig = scatter.symmetric_eigen();
    let mut order: Vec<usize> = (0..10).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[order[9]];
    // A second near-null direction means the samples do not pin down a
    // unique quadric (e.g. all on one plane or circle).
    if eig.eigenvalues[order[1]] <= 1e-12 * largest {
        return Err(Error::InsufficientCoverage);
    }
    let v = eig.eigenvectors.column(order[0]).into_owned();

    let a = Mat3::new(v[0], v[3], v[4], v[3], v[1], v[5], v[4], v[5], v[2]);
    let b = Vec3::new(v[6], v[7], v[8]);
    let a_inv = a.try_inverse().ok_or(Error::InsufficientCoverage)?;
    let center = -(a_inv * b);
    let level = center.dot(&(a * center)) - v[9];
    if !level.is_finite() || level == 0.0 {
        return Err(Error::InsufficientCoverage);
    }
    let a_unit = a / level;

    let h = center * scale + mean;
    let a_raw = a_unit / (scale * scale);
    let chol = nalgebra::Cholesky::new(a_raw).ok_or(Error::InsufficientCoverage)?;
    let mut r = chol.l().transpose();
    r[(1, 0)] = 0.0;
    r[(2, 0)] = 0.0;
    r[(2, 1)] = 0.0;
    Ok(MagIntrinsics { r, h })
}

fn cost(p: &Vec9, samples: &[Vec3]) -> f64 {
    let m = MagIntrinsics::from_params(p);
    samples
        .iter()
        .map(|y| (m.apply(y).norm() - 1.0).powi(2))
        .sum()
}

/// Gauss-Newton normal equations `(JᵀJ, Jᵀr)` of the norm residual.
fn normal_equations(p: &Vec9, samples: &[Vec3]) -> (Mat9, Vec9) {
    let m = MagIntrinsics::from_params(p);
    let mut jtj = Mat9::zeros();
    let mut jtr = Vec9::zeros();
    for y in samples {
        let u = y - m.h;
        let w = m.r * u;
        let norm = w.norm();
        if norm == 0.0 {
            continue;
        }
        let res = norm - 1.0;
        let g = w / norm;
        let dh = -(m.r.transpose() * g);
        let row = Vec9::from_column_slice(&[
            g.x * u.x,
            g.x * u.y,
            g.x * u.z,
            g.y * u.y,
            g.y * u.z,
            g.z * u.z,
            dh.x,
            dh.y,
            dh.z,
        ]);
        jtj += row * row.transpose();
        jtr += row * res;
    }
    (jtj, jtr)
}

/// Gauss-Newton refinement with step halving.
pub fn refine(samples: &[Vec3], init: &MagIntrinsics) -> Result<MagCalReport> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_SAMPLES,
            got: samples.len(),
        });
    }
    if init.r.determinant().abs() <= 1e-12 {
        return Err(Error::Singular("initial magnetometer shape matrix"));
    }

    let mut p = init.to_params();
    let mut current = cost(&p, samples);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = normal_equations(&p, samples);
        let step = match jtj.cholesky() {
            Some(c) => -c.solve(&jtr),
            None => jtj
                .lu()
                .solve(&(-jtr))
                .ok_or(Error::Singular("Gauss-Newton normal matrix"))?,
        };

        if step.norm() < STEP_TOL {
            p += step;
            converged = true;
            break;
        }

        let mut accepted = false;
        let mut scale = 1.0;
        for _ in 0..=MAX_HALVINGS {
            let trial = p + step * scale;
            let c = cost(&trial, samples);
            if c < current {
                p = trial;
                current = c;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // No halving helps. A negligible predicted decrease means the
            // cost is flat to rounding: converged. Otherwise GN is lost.
            let predicted = -jtr.dot(&step);
            if predicted <= 1e-12 * current.max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
            return Err(Error::RefineDiverged { iterations });
        }
    }

    let intrinsics = MagIntrinsics::from_params(&p);
    if (0..3).any(|i| intrinsics.r[(i, i)] <= 0.0) {
        return Err(Error::InsufficientCoverage);
    }
    let eig = normal_equations(&p, samples)
        .0
        .symmetric_eigen()
        .eigenvalues;
    let (hi, lo) = (eig.max(), eig.min());
    Ok(MagCalReport {
        intrinsics,
        norm_residual_rms: norm_residual_rms(&intrinsics, samples),
        iterations,
        converged,
        condition_number: if lo > 0.0 { hi / lo } else { f64::INFINITY },
    })
}

/// `fit_initial` followed by `refine`.
pub fn calibrate(samples: &[Vec3]) -> Result<MagCalReport> {
    let init = fit_initial(samples)?;
    refine(samples, &init)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn unit_vectors(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v = Vec3::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                );
                v.normalize()
            })
            .collect()
    }

    fn truth() -> MagIntrinsics {
        MagIntrinsics {
            r: Mat3::new(1.25, 0.08, -0.05, 0.0, 0.9, 0.06, 0.0, 0.0, 1.1),
            h: Vec3::new(0.3, -0.2, 0.45),
        }
    }

    /// Forward model `y = R⁻¹ m + h`, optional noise added before the inverse
    /// shape matrix so its std is in calibrated units.
    fn forward(t: &MagIntrinsics, ms: &[Vec3], noise: f64, seed: u64) -> Vec<Vec3> {
        let r_inv = t.r.try_inverse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ms.iter()
            .map(|m| {
                let n = Vec3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)) * noise;
                r_inv * (m + n) + t.h
            })
            .collect()
    }

    #[test]
    fn unit_sphere_is_identity() {
        let s = unit_vectors(100, 1);
        let fit = fit_initial(&s).unwrap();
        assert_abs_diff_eq!(fit.r, Mat3::identity(), epsilon = 1e-9);
        assert_abs_diff_eq!(fit.h, Vec3::zeros(), epsilon = 1e-9);
    }

    #[test]
    fn recovers_forward_model_noise_free() {
        let t = truth();
        let y = forward(&t, &unit_vectors(200, 2), 0.0, 0);
        let fit = fit_initial(&y).unwrap();
        assert_abs_diff_eq!(fit.r, t.r, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.h, t.h, epsilon = 1e-6);
        for yi in &y {
            assert_abs_diff_eq!(fit.apply(yi).norm(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn cap_coverage_is_badly_conditioned() {
        let t = truth();
        let full = calibrate(&forward(&t, &unit_vectors(400, 5), 0.01, 1)).unwrap();
        // Directions within 60 deg of +z only.
        let cap: Vec<Vec3> = unit_vectors(4000, 6)
            .into_iter()
            .filter(|v| v.z > 0.5)
            .collect();
        let partial = calibrate(&forward(&t, &cap, 0.01, 2)).unwrap();
        assert!(full.condition_number < 1e3, "{}", full.condition_number);
        assert!(partial.condition_number > 10.0 * full.condition_number);
    }

    #[test]
    fn too_few_samples() {
        let s = unit_vectors(8, 3);
        assert!(matches!(
            fit_initial(&s),
            Err(Error::TooFewSamples { needed: 9, got: 8 })
        ));
    }

    #[test]
    fn planar_samples_lack_coverage() {
        let s: Vec<Vec3> = (0..50)
            .map(|i| {
                let a = i as f64 * 0.3;
                Vec3::new(a.cos(), a.sin(), 0.2)
            })
            .collect();
        assert!(matches!(fit_initial(&s), Err(Error::InsufficientCoverage)));
    }

    #[test]
    fn refine_noise_free_is_exact() {
        let t = truth();
        let y = forward(&t, &unit_vectors(300, 4), 0.0, 0);
        let init = MagIntrinsics {
            r: t.r + Mat3::new(0.02, 0.01, 0.0, 0.0, -0.03, 0.01, 0.0, 0.0, 0.02),
            h: t.h + Vec3::new(0.05, -0.02, 0.03),
        };
        let rep = refine(&y, &init).unwrap();
        assert!(rep.converged);
        assert!(rep.norm_residual_rms < 1e-9, "{}", rep.norm_residual_rms);
        assert_abs_diff_eq!(rep.intrinsics.r, t.r, epsilon = 1e-8);
    }

    #[test]
    fn refine_noisy_residual_matches_noise_level() {
        let t = truth();
        let y = forward(&t, &unit_vectors(2000, 5), 0.01, 6);
        let rep = calibrate(&y).unwrap();
        assert!(rep.converged);
        let rms = rep.norm_residual_rms;
        assert!((0.005..=0.02).contains(&rms), "rms {rms}");
        assert_abs_diff_eq!(rep.intrinsics.r, t.r, epsilon = 5e-3);
        assert_abs_diff_eq!(rep.intrinsics.h, t.h, epsilon = 5e-3);
        let init = fit_initial(&y).unwrap();
        assert!(rms <= norm_residual_rms(&init, &y) + 1e-15);
    }

    #[test]
    fn refine_at_optimum_is_fixed_point() {
        let t = truth();
        let y = forward(&t, &unit_vectors(300, 7), 0.0, 0);
        let rep = refine(&y, &t).unwrap();
        assert!(rep.iterations <= 2);
        assert_abs_diff_eq!(rep.intrinsics.r, t.r, epsilon = 1e-9);
        assert_abs_diff_eq!(rep.intrinsics.h, t.h, epsilon = 1e-9);
    }

    #[test]
    fn apply_examples() {
        let id = MagIntrinsics::identity();
        let y = Vec3::new(0.3, -0.4, 0.866);
        assert_eq!(id.apply(&y), y);
        let centered = MagIntrinsics { r: truth().r, h: y };
        assert_eq!(centered.apply(&y), Vec3::zeros());
    }

    #[test]
    fn refine_rejects_singular_init() {
        let y = unit_vectors(20, 8);
        let bad = MagIntrinsics {
            r: Mat3::zeros(),
            h: Vec3::zeros(),
        };
        assert!(matches!(refine(&y, &bad), Err(Error::Singular(_))));
    }

    #[test]
    fn order_invariant() {
        let t = truth();
        let y = forward(&t, &unit_vectors(500, 9), 0.01, 10);
        let mut rev = y.clone();
        rev.reverse();
        let a = calibrate(&y).unwrap().intrinsics;
        let b = calibrate(&rev).unwrap().intrinsics;
        assert_abs_diff_eq!(a.r, b.r, epsilon = 1e-9);
        assert_abs_diff_eq!(a.h, b.h, epsilon = 1e-9);
    }

    #[test]
    fn new_validates_shape() {
        assert!(MagIntrinsics::new(Mat3::identity(), Vec3::zeros()).is_ok());
        assert!(MagIntrinsics::new(
            Mat3::new(1., 0., 0., 0.1, 1., 0., 0., 0., 1.),
            Vec3::zeros()
        )
        .is_err());
        assert!(MagIntrinsics::new(-Mat3::identity(), Vec3::zeros()).is_err());
    }
}
