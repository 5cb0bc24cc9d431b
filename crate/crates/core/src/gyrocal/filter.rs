//! Error-state EKF for the model
//!
//! ```text
//! dC/dt = C (K y + ε + n)×,   dK/dt = 0,   dε/dt = 0,   dm_i/dt ≈ 0
//! m̂ = Cᵀ m_i + n_m
//! ```
//!
//! where `C` maps the magnetometer frame into the inertial frame.
//!
//! Error convention (used consistently by propagation, update and reset):
//!
//! * attitude: `C = Ĉ · exp(δφ)` (right-multiplicative, magnetometer frame)
//! * `vec K`, `ε`, `m_i`: additive
//!
//! State order is `[δφ (3), vec δK (9), δε (3), δm_i (3)]`.
//!
//! Propagation uses the exact first-order Jacobians of the discrete step
//! `C⁺ = C · exp((K y + ε) dt)`:
//!
//! ```text
//! δφ⁺ = ΔCᵀ δφ + J_r(θ) (yᵀ ⊗ I₃) dt · vec δK + J_r(θ) dt · δε + J_r(θ) dt · n
//! ```
//!
//! with `θ = (K y + ε) dt`, `ΔC = exp(θ)` and `J_r` the right Jacobian of SO(3).
//! The rate noise `n = K n_g` has covariance `σ_g² K Kᵀ` per unit bandwidth.
//! The measurement Jacobian is `H = [ (Ĉᵀ m̂_i)×, 0, 0, Ĉᵀ ]`.

use nalgebra::{SMatrix, SVector};

use super::NoiseConfig;
use crate::error::{Error, Result};
use crate::rotation::{right_jacobian, skew, so3_exp, so3_log, unvec9, vec9, Mat3, RotMat, Vec3};

pub const STATE_DIM: usize = 18;
pub const ATT: usize = 0;
pub const GAIN: usize = 3;
pub const BIAS: usize = 12;
pub const FIELD: usize = 15;

/// Largest propagation step accepted by [`propagate`].
pub const MAX_STEP: f64 = 0.1;
/// Calibrated field norms outside this band are treated as disturbed.
pub const GATE: (f64, f64) = (0.5, 1.5);

pub type Mat18 = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type Vec18 = SVector<f64, STATE_DIM>;
pub type Mat18x3 = SMatrix<f64, STATE_DIM, 3>;
pub type Mat3x18 = SMatrix<f64, 3, STATE_DIM>;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    /// Magnetometer-to-inertial attitude.
    pub c_m_i: RotMat,
    /// Combined gain `K = C_b^m K_g`.
    pub k: Mat3,
    /// Equivalent bias `ε = C_b^m ε_b` (rad/s).
    pub eps: Vec3,
    /// Field in the inertial frame.
    pub m_i: Vec3,
    pub p: Mat18,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Applied,
    Gated,
}

impl FilterState {
    /// `self ⊞ δx` under the error convention above.
    pub fn retract(&self, dx: &Vec18) -> FilterState {
        let dphi: Vec3 = dx.fixed_rows::<3>(ATT).into_owned();
        let dk = unvec9(&dx.fixed_rows::<9>(GAIN).into_owned());
        FilterState {
            c_m_i: self.c_m_i * so3_exp(&dphi),
            k: self.k + dk,
            eps: self.eps + dx.fixed_rows::<3>(BIAS),
            m_i: self.m_i + dx.fixed_rows::<3>(FIELD),
            p: self.p,
        }
    }

    /// `other ⊟ self`, the inverse of [`FilterState::retract`].
    pub fn local(&self, other: &FilterState) -> Result<Vec18> {
        let mut dx = Vec18::zeros();
        dx.fixed_rows_mut::<3>(ATT)
            .copy_from(&so3_log(&(self.c_m_i.transpose() * other.c_m_i))?);
        dx.fixed_rows_mut::<9>(GAIN)
            .copy_from(&vec9(&(other.k - self.k)));
        dx.fixed_rows_mut::<3>(BIAS)
            .copy_from(&(other.eps - self.eps));
        dx.fixed_rows_mut::<3>(FIELD)
            .copy_from(&(other.m_i - self.m_i));
        Ok(dx)
    }

    pub fn predicted_measurement(&self) -> Vec3 {
        self.c_m_i.transpose() * self.m_i
    }

    pub fn is_finite(&self) -> bool {
        self.c_m_i.matrix().iter().all(|v| v.is_finite())
            && self.k.iter().all(|v| v.is_finite())
            && self.eps.iter().all(|v| v.is_finite())
            && self.m_i.iter().all(|v| v.is_finite())
            && self.p.iter().all(|v| v.is_finite())
    }
}

/// Mean of the discrete propagation step.
pub fn propagate_mean(c_m_i: &RotMat, k: &Mat3, eps: &Vec3, y_g: &Vec3, dt: f64) -> RotMat {
    *c_m_i * so3_exp(&((k * y_g + eps) * dt))
}

/// Error-state transition `F` and noise input `G` for one step.
///
/// `G` maps rate noise in the magnetometer frame to the error state; the
/// discrete noise contribution is `G Q_c Gᵀ dt`.
pub fn transition_jacobians(state: &FilterState, y_g: &Vec3, dt: f64) -> (Mat18, Mat18x3) {
    let theta = (state.k * y_g + state.eps) * dt;
    let delta = so3_exp(&theta);
    let jr = right_jacobian(&theta);

    let mut f = Mat18::identity();
    f.fixed_view_mut::<3, 3>(ATT, ATT)
        .copy_from(&delta.transpose().into_inner());
    for j in 0..3 {
        f.fixed_view_mut::<3, 3>(ATT, GAIN + 3 * j)
            .copy_from(&(jr * (y_g[j] * dt)));
    }
    f.fixed_view_mut::<3, 3>(ATT, BIAS).copy_from(&(jr * dt));

    let mut g = Mat18x3::zeros();
    g.fixed_view_mut::<3, 3>(ATT, 0).copy_from(&jr);
    (f, g)
}

pub fn measurement_jacobian(state: &FilterState) -> Mat3x18 {
    let mut h = Mat3x18::zeros();
    h.fixed_view_mut::<3, 3>(0, ATT)
        .copy_from(&skew(&state.predicted_measurement()));
    h.fixed_view_mut::<3, 3>(0, FIELD)
        .copy_from(&state.c_m_i.transpose().into_inner());
    h
}

fn symmetrize(p: &Mat18) -> Mat18 {
    (p + p.transpose()) * 0.5
}

/// One prediction step over `dt` seconds with raw gyro reading `y_g`.
pub fn propagate(
    state: &FilterState,
    y_g: &Vec3,
    dt: f64,
    noise: &NoiseConfig,
) -> Result<FilterState> {
    if !(dt > 0.0 && dt <= MAX_STEP) {
        return Err(Error::InvalidStep(dt));
    }
    let (f, g) = transition_jacobians(state, y_g, dt);
    let q_rate = state.k * state.k.transpose() * noise.gyro_noise_density.powi(2);
    let mut p = f * state.p * f.transpose() + g * q_rate * g.transpose() * dt;
    for i in 0..9 {
        p[(GAIN + i, GAIN + i)] += noise.k_random_walk * dt;
    }
    for i in 0..3 {
        p[(BIAS + i, BIAS + i)] += noise.eps_random_walk * dt;
        p[(FIELD + i, FIELD + i)] += noise.field_random_walk * dt;
    }
    Ok(FilterState {
        c_m_i: propagate_mean(&state.c_m_i, &state.k, &state.eps, y_g, dt),
        k: state.k,
        eps: state.eps,
        m_i: state.m_i,
        p: symmetrize(&p),
    })
}

/// Measurement update with a calibrated magnetometer sample.
///
/// Samples whose norm falls outside [`GATE`] are skipped and the state is
/// returned unchanged.
pub fn update(
    state: &FilterState,
    m_hat: &Vec3,
    noise: &NoiseConfig,
) -> Result<(FilterState, UpdateOutcome)> {
    let norm = m_hat.norm();
    if !(norm > GATE.0 && norm < GATE.1) {
        return Ok((state.clone(), UpdateOutcome::Gated));
    }
    let h = measurement_jacobian(state);
    let r = Mat3::identity() * noise.mag_noise_std.powi(2);
    let s = h * state.p * h.transpose() + r;
    let s_inv = s
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::Singular("innovation covariance"))?;
    let gain = state.p * h.transpose() * s_inv;
    let innovation = m_hat - state.predicted_measurement();
    let dx = gain * innovation;

    let i_kh = Mat18::identity() - gain * h;
    let p = i_kh * state.p * i_kh.transpose() + gain * r * gain.transpose();

    let mut next = state.retract(&dx);
    next.p = symmetrize(&p);
    Ok((next, UpdateOutcome::Applied))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn base_state() -> FilterState {
        FilterState {
            c_m_i: RotMat::identity(),
            k: Mat3::identity(),
            eps: Vec3::zeros(),
            m_i: Vec3::new(0.6, 0.0, 0.8),
            p: Mat18::identity() * 1e-4,
        }
    }

    fn random_state(rng: &mut ChaCha8Rng) -> FilterState {
        let v = |rng: &mut ChaCha8Rng, s: f64| Vec3::from_fn(|_, _| rng.random_range(-s..s));
        FilterState {
            c_m_i: so3_exp(&v(rng, 2.0)),
            k: Mat3::identity() + Mat3::from_fn(|_, _| rng.random_range(-0.3..0.3)),
            eps: v(rng, 0.1),
            m_i: v(rng, 1.0),
            p: Mat18::identity() * 1e-4,
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (1.0 + b.abs().max(a.abs()))
    }

    #[test]
    fn zero_rate_keeps_attitude() {
        let s = base_state();
        let noise = NoiseConfig::default();
        let next = propagate(&s, &Vec3::zeros(), 0.01, &noise).unwrap();
        assert_eq!(next.c_m_i, s.c_m_i);
        let mut grown = next.p - s.p;
        assert!(grown.fixed_view::<3, 3>(ATT, ATT).trace() > 0.0);
        for i in 0..3 {
            assert_abs_diff_eq!(
                grown[(FIELD + i, FIELD + i)],
                noise.field_random_walk * 0.01,
                epsilon = 1e-18
            );
            grown[(FIELD + i, FIELD + i)] = 0.0;
        }
        assert_abs_diff_eq!(
            grown.fixed_view::<15, 15>(3, 3).into_owned().amax(),
            0.0,
            epsilon = 1e-18
        );
    }

    #[test]
    fn constant_yaw_rate_closed_form() {
        let mut s = base_state();
        let noise = NoiseConfig::default();
        let rate = Vec3::new(0.0, 0.0, FRAC_PI_2 / 2.0);
        for _ in 0..200 {
            s = propagate(&s, &rate, 0.01, &noise).unwrap();
        }
        let expected = crate::rotation::rot_z(FRAC_PI_2);
        assert_abs_diff_eq!(*s.c_m_i.matrix(), expected, epsilon = 1e-6);
    }

    #[test]
    fn mean_matches_oversampled_integration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = base_state();
        s.k = Mat3::new(1.1, 0.1, 0.0, -0.05, 0.95, 0.02, 0.01, 0.0, 1.05);
        s.eps = Vec3::new(0.01, -0.02, 0.03);
        let noise = NoiseConfig::default();
        let mut fine = s.c_m_i;
        for _ in 0..1000 {
            let y = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            s = propagate(&s, &y, 0.01, &noise).unwrap();
            for _ in 0..10 {
                let w = s.k * y + s.eps;
                fine = fine * so3_exp(&(w * 0.001));
            }
        }
        assert!(s.c_m_i.angle_to(&fine) < 1e-6);
    }

    #[test]
    fn invalid_steps_rejected() {
        let s = base_state();
        let noise = NoiseConfig::default();
        assert!(propagate(&s, &Vec3::zeros(), 0.0, &noise).is_err());
        assert!(propagate(&s, &Vec3::zeros(), 0.2, &noise).is_err());
    }

    #[test]
    fn zero_innovation_shrinks_covariance() {
        let s = base_state();
        let noise = NoiseConfig::default();
        let z = s.predicted_measurement();
        let (next, outcome) = update(&s, &z, &noise).unwrap();
        assert_eq!(outcome, UpdateOutcome::Applied);
        assert_eq!(next.c_m_i, s.c_m_i);
        assert_eq!(next.k, s.k);
        assert_eq!(next.eps, s.eps);
        assert_eq!(next.m_i, s.m_i);
        assert!(next.p.trace() < s.p.trace());
    }

    #[test]
    fn gate_rejects_disturbed_field() {
        let s = base_state();
        let noise = NoiseConfig::default();
        let (next, outcome) = update(&s, &Vec3::new(2.0, 0.0, 0.0), &noise).unwrap();
        assert_eq!(outcome, UpdateOutcome::Gated);
        assert_eq!(next, s);
    }

    #[test]
    fn transition_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..100 {
            let s = random_state(&mut rng);
            let y = Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let dt = 0.01 * rng.random_range(0.5..10.0);
            let (f, g) = transition_jacobians(&s, &y, dt);
            let step = |st: &FilterState| {
                let mut n = st.clone();
                n.c_m_i = propagate_mean(&st.c_m_i, &st.k, &st.eps, &y, dt);
                n
            };
            let nominal = step(&s);
            for col in 0..STATE_DIM {
                let mut dx = Vec18::zeros();
                dx[col] = h;
                let plus = nominal.local(&step(&s.retract(&dx))).unwrap();
                let minus = nominal.local(&step(&s.retract(&(-dx)))).unwrap();
                let fd = (plus - minus) / (2.0 * h);
                for row in 0..STATE_DIM {
                    let e = rel_err(f[(row, col)], fd[row]);
                    assert!(e < 1e-5, "F[{row},{col}] {} vs {}", f[(row, col)], fd[row]);
                }
            }
            // Noise input: perturb the integrated rate by n·dt.
            for col in 0..3 {
                let mut n = Vec3::zeros();
                n[col] = h;
                let with = |n: Vec3| {
                    let c = s.c_m_i * so3_exp(&((s.k * y + s.eps + n) * dt));
                    so3_log(&(nominal.c_m_i.transpose() * c)).unwrap()
                };
                let fd = (with(n) - with(-n)) / (2.0 * h);
                for row in 0..3 {
                    let e = rel_err(g[(row, col)] * dt, fd[row]);
                    assert!(e < 1e-5, "G[{row},{col}]");
                }
            }
        }
    }

    #[test]
    fn measurement_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let step = 1e-6;
        for _ in 0..100 {
            let s = random_state(&mut rng);
            let h = measurement_jacobian(&s);
            for col in 0..STATE_DIM {
                let mut dx = Vec18::zeros();
                dx[col] = step;
                let plus = s.retract(&dx).predicted_measurement();
                let minus = s.retract(&(-dx)).predicted_measurement();
                let fd = (plus - minus) / (2.0 * step);
                for row in 0..3 {
                    let e = rel_err(h[(row, col)], fd[row]);
                    assert!(e < 1e-5, "H[{row},{col}] {} vs {}", h[(row, col)], fd[row]);
                }
            }
        }
    }

    #[test]
    fn retract_local_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = random_state(&mut rng);
        let dx = Vec18::from_fn(|_, _| rng.random_range(-0.1..0.1));
        let back = s.local(&s.retract(&dx)).unwrap();
        assert_abs_diff_eq!(back, dx, epsilon = 1e-12);
    }
}
