//! Rotation and small-matrix primitives shared by the whole pipeline.
//!
//! Rotations are plain direction cosine matrices. `RotMat` only guards the
//! orthogonality invariant; arithmetic is done on the inner [`Mat3`].
//!
//! Euler angles use the ZYX (yaw-pitch-roll) convention throughout:
//! `C = Rz(yaw) * Ry(pitch) * Rx(roll)`, with `C` mapping body-frame vectors
//! into the reference frame. Reported misalignment angles depend on this.

use std::ops::Mul;

use nalgebra::{DMatrix, Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Vec9 = SVector<f64, 9>;

/// Below this angle `so3_exp`/`so3_log` switch to Taylor expansions.
const SMALL_ANGLE: f64 = 1e-8;
/// Tolerance used when validating `RotMat` invariants.
pub const ROTATION_TOL: f64 = 1e-9;

/// A proper rotation matrix (orthogonal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "crate::serde_util::Rows3",
    into = "crate::serde_util::Rows3"
)]
pub struct RotMat(Mat3);

impl RotMat {
    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Wraps `m` after checking `‖mᵀm − I‖_F < 1e-9` and `det m ≈ +1`.
    pub fn try_from_matrix(m: Mat3) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::NotARotation("non-finite entries".into()));
        }
        let ortho = (m.transpose() * m - Mat3::identity()).norm();
        if ortho >= ROTATION_TOL {
            return Err(Error::NotARotation(format!(
                "orthogonality defect {ortho:.3e}"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() >= ROTATION_TOL {
            return Err(Error::NotARotation(format!("determinant {det}")));
        }
        Ok(Self(m))
    }

    /// Wraps `m` without validation. Callers must guarantee the invariant.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Self(m)
    }

    /// Projects an approximately orthogonal matrix onto SO(3) (polar factor).
    pub fn orthonormalize(m: &Mat3) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        let mut d = Mat3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Self(u * d * v_t)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn into_inner(self) -> Mat3 {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn orthogonality_defect(&self) -> f64 {
        (self.0.transpose() * self.0 - Mat3::identity()).norm()
    }

    /// Rotation angle of `selfᵀ · other` in radians.
    pub fn angle_to(&self, other: &RotMat) -> f64 {
        rotation_angle(&(self.transpose() * *other))
    }
}

impl Default for RotMat {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for RotMat {
    type Output = RotMat;
    fn mul(self, rhs: RotMat) -> RotMat {
        RotMat(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for RotMat {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<Mat3> for RotMat {
    type Output = Mat3;
    fn mul(self, rhs: Mat3) -> Mat3 {
        self.0 * rhs
    }
}

/// Roll, pitch and yaw in radians (ZYX convention).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn from_degrees(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::new(roll.to_radians(), pitch.to_radians(), yaw.to_radians())
    }

    pub fn to_degrees(&self) -> [f64; 3] {
        [
            self.roll.to_degrees(),
            self.pitch.to_degrees(),
            self.yaw.to_degrees(),
        ]
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.roll, self.pitch, self.yaw]
    }
}

/// Cross-product matrix: `skew(v) * w == v × w`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues formula for the SO(3) exponential.
pub fn so3_exp(phi: &Vec3) -> RotMat {
    let angle = phi.norm();
    let s = skew(phi);
    let s2 = s * s;
    let (a, b) = if angle < SMALL_ANGLE {
        (1.0 - angle * angle / 6.0, 0.5 - angle * angle / 24.0)
    } else {
        (angle.sin() / angle, (1.0 - angle.cos()) / (angle * angle))
    };
    RotMat(Mat3::identity() + s * a + s2 * b)
}

/// Rotation angle in `[0, π]` computed robustly from both trace and skew part.
pub fn rotation_angle(c: &RotMat) -> f64 {
    let m = c.matrix();
    let axis = Vec3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    let sin_term = 0.5 * axis.norm();
    let cos_term = 0.5 * (m.trace() - 1.0);
    sin_term.atan2(cos_term)
}

/// Inverse of [`so3_exp`]. Angles at (or within 1e-6 of) π are rejected
/// because the rotation axis sign is ambiguous there.
pub fn so3_log(c: &RotMat) -> Result<Vec3> {
    let m = c.matrix();
    let angle = rotation_angle(c);
    if angle > std::f64::consts::PI - 1e-6 {
        return Err(Error::AmbiguousLogarithm(angle));
    }
    let vee = Vec3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    let scale = if angle < SMALL_ANGLE {
        0.5 * (1.0 + angle * angle / 6.0)
    } else {
        angle / (2.0 * angle.sin())
    };
    Ok(vee * scale)
}

/// Right Jacobian of SO(3): `exp(θ + δ) ≈ exp(θ)·exp(J_r(θ)·δ)`.
pub fn right_jacobian(theta: &Vec3) -> Mat3 {
    let angle = theta.norm();
    let s = skew(theta);
    let (a, b) = if angle < 1e-5 {
        (
            0.5 - angle * angle / 24.0,
            1.0 / 6.0 - angle * angle / 120.0,
        )
    } else {
        let a2 = angle * angle;
        (
            (1.0 - angle.cos()) / a2,
            (angle - angle.sin()) / (a2 * angle),
        )
    };
    Mat3::identity() - s * a + s * s * b
}

pub fn rot_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn euler_to_dcm(e: &EulerAngles) -> RotMat {
    RotMat(rot_z(e.yaw) * rot_y(e.pitch) * rot_x(e.roll))
}

pub fn dcm_to_euler(c: &RotMat) -> Result<EulerAngles> {
    let m = c.matrix();
    if m[(2, 0)].abs() >= 1.0 - 1e-9 {
        return Err(Error::GimbalLock);
    }
    Ok(EulerAngles {
        roll: m[(2, 1)].atan2(m[(2, 2)]),
        pitch: -m[(2, 0)].asin(),
        yaw: m[(1, 0)].atan2(m[(0, 0)]),
    })
}

/// Column-stacking vectorization.
pub fn vec9(m: &Mat3) -> Vec9 {
    Vec9::from_column_slice(m.as_slice())
}

/// Inverse of [`vec9`].
pub fn unvec9(v: &Vec9) -> Mat3 {
    Mat3::from_column_slice(v.as_slice())
}

/// Kronecker product `a ⊗ b` for dynamically sized operands.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// QR factorization `k = q·r` with `r` upper triangular with a strictly
/// positive diagonal and `q` a proper rotation.
///
/// Fails for (near-)singular input and when the sign-fixed orthogonal factor
/// is a reflection, i.e. `det k < 0`.
pub fn qr_posdiag(k: &Mat3) -> Result<(RotMat, Mat3)> {
    let det = k.determinant();
    if !det.is_finite() || det.abs() <= 1e-12 {
        return Err(Error::Singular("QR input matrix"));
    }
    let qr = k.qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..3 {
        if r[(i, i)] < 0.0 {
            for j in 0..3 {
                r[(i, j)] = -r[(i, j)];
                q[(j, i)] = -q[(j, i)];
            }
        }
    }
    // Clean the strictly lower part which holds rounding residue only.
    for i in 1..3 {
        for j in 0..i {
            r[(i, j)] = 0.0;
        }
    }
    if q.determinant() < 0.0 {
        return Err(Error::ImproperFactorization);
    }
    Ok((RotMat(q), r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn matrix_power_exp(phi: &Vec3) -> Mat3 {
        let s = skew(phi);
        let mut term = Mat3::identity();
        let mut sum = Mat3::identity();
        for n in 1..20 {
            term = term * s / n as f64;
            sum += term;
        }
        sum
    }

    fn vec3_strategy(bound: f64) -> impl Strategy<Value = Vec3> {
        (-bound..bound, -bound..bound, -bound..bound).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    fn mat3_strategy() -> impl Strategy<Value = Mat3> {
        proptest::collection::vec(-2.0..2.0f64, 9).prop_map(|v| Mat3::from_row_slice(&v))
    }

    #[test]
    fn skew_basics() {
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
        let out = skew(&Vec3::x()) * Vec3::y();
        assert_eq!(out, Vec3::z());
    }

    #[test]
    fn exp_basics() {
        assert_eq!(so3_exp(&Vec3::zeros()), RotMat::identity());
        let c = so3_exp(&Vec3::new(0.0, 0.0, FRAC_PI_2));
        assert_abs_diff_eq!(c * Vec3::x(), Vec3::y(), epsilon = 1e-15);
    }

    #[test]
    fn exp_tiny_angle_uses_series() {
        let phi = Vec3::new(1e-10, -2e-10, 3e-10);
        let c = so3_exp(&phi);
        assert_abs_diff_eq!(*c.matrix(), matrix_power_exp(&phi), epsilon = 1e-18);
        assert_abs_diff_eq!(so3_log(&c).unwrap(), phi, epsilon = 1e-20);
    }

    #[test]
    fn log_basics() {
        assert_eq!(so3_log(&RotMat::identity()).unwrap(), Vec3::zeros());
        let phi = Vec3::new(0.1, 0.2, 0.3);
        assert_abs_diff_eq!(so3_log(&so3_exp(&phi)).unwrap(), phi, epsilon = 1e-10);
    }

    #[test]
    fn log_rejects_half_turn() {
        let c = so3_exp(&Vec3::new(PI, 0.0, 0.0));
        assert!(matches!(so3_log(&c), Err(Error::AmbiguousLogarithm(_))));
    }

    #[test]
    fn euler_basics() {
        let e = dcm_to_euler(&RotMat::identity()).unwrap();
        assert_eq!(e.as_array(), [0.0, 0.0, 0.0]);

        let yaw = euler_to_dcm(&EulerAngles::from_degrees(0.0, 0.0, 90.0));
        assert_abs_diff_eq!(yaw * Vec3::x(), Vec3::y(), epsilon = 1e-15);

        let e = EulerAngles::from_degrees(10.0, 20.0, 15.0);
        let back = dcm_to_euler(&euler_to_dcm(&e)).unwrap();
        for (a, b) in back.to_degrees().iter().zip([10.0, 20.0, 15.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn euler_gimbal_lock_rejected() {
        let c = euler_to_dcm(&EulerAngles::new(0.3, FRAC_PI_2, 0.1));
        assert!(matches!(dcm_to_euler(&c), Err(Error::GimbalLock)));
    }

    #[test]
    fn vec_and_kron_layout() {
        let v = vec9(&Mat3::identity());
        assert_eq!(v.as_slice(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let row = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let s =
            DMatrix::from_row_slice(3, 3, skew(&Vec3::new(0.1, 0.2, 0.3)).transpose().as_slice());
        let k = kron(&row, &s);
        assert_eq!(k.shape(), (3, 9));
        assert_eq!(
            unvec9(&vec9(&Mat3::new(1., 2., 3., 4., 5., 6., 7., 8., 9.))),
            Mat3::new(1., 2., 3., 4., 5., 6., 7., 8., 9.)
        );
    }

    #[test]
    fn qr_of_upper_triangular_is_trivial() {
        let k = Mat3::new(1.1, 0.1, 0.15, 0.0, 1.2, 0.2, 0.0, 0.0, 1.3);
        let (q, r) = qr_posdiag(&k).unwrap();
        assert_abs_diff_eq!(*q.matrix(), Mat3::identity(), epsilon = 1e-14);
        assert_abs_diff_eq!(r, k, epsilon = 1e-14);
    }

    #[test]
    fn qr_recovers_misaligned_scale_matrix() {
        let kg = Mat3::new(1.1, 0.1, 0.15, 0.0, 1.2, 0.2, 0.0, 0.0, 1.3);
        let cbm = euler_to_dcm(&EulerAngles::from_degrees(10.0, 20.0, 15.0));
        let (q, r) = qr_posdiag(&(cbm * kg)).unwrap();
        assert_abs_diff_eq!(*q.matrix(), *cbm.matrix(), epsilon = 1e-10);
        assert_abs_diff_eq!(r, kg, epsilon = 1e-10);
    }

    #[test]
    fn qr_rejects_singular_and_reflection() {
        let singular = Mat3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 0.0, 1.0);
        assert!(matches!(qr_posdiag(&singular), Err(Error::Singular(_))));
        let reflect = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(matches!(
            qr_posdiag(&reflect),
            Err(Error::ImproperFactorization)
        ));
    }

    #[test]
    fn rotmat_validation() {
        assert!(RotMat::try_from_matrix(Mat3::identity() * 1.001).is_err());
        assert!(RotMat::try_from_matrix(Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0))).is_err());
        let c = so3_exp(&Vec3::new(0.4, -0.2, 1.0));
        assert!(RotMat::try_from_matrix(*c.matrix()).is_ok());
        let noisy = c.into_inner() + Mat3::repeat(1e-4);
        let fixed = RotMat::orthonormalize(&noisy);
        assert!(fixed.orthogonality_defect() < 1e-14);
    }

    #[test]
    fn right_jacobian_matches_finite_differences() {
        let theta = Vec3::new(0.3, -0.7, 0.2);
        let jr = right_jacobian(&theta);
        let base = so3_exp(&theta);
        let h = 1e-6;
        for i in 0..3 {
            let mut d = Vec3::zeros();
            d[i] = h;
            let plus = so3_log(&(base.transpose() * so3_exp(&(theta + d)))).unwrap();
            let minus = so3_log(&(base.transpose() * so3_exp(&(theta - d)))).unwrap();
            let col = (plus - minus) / (2.0 * h);
            assert_abs_diff_eq!(col, jr.column(i).into_owned(), epsilon = 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn skew_is_cross_product(v in vec3_strategy(10.0), w in vec3_strategy(10.0)) {
            let s = skew(&v);
            prop_assert!((s + s.transpose()).norm() == 0.0);
            let direct = Vec3::new(v.y * w.z - v.z * w.y, v.z * w.x - v.x * w.z, v.x * w.y - v.y * w.x);
            prop_assert!((s * w - direct).amax() <= 1e-14 * (1.0 + v.norm() * w.norm()));
        }
    }

    proptest! {
        #[test]
        fn exp_matches_power_series(phi in vec3_strategy(1.0)) {
            let diff = (so3_exp(&phi).into_inner() - matrix_power_exp(&phi)).norm();
            prop_assert!(diff < 1e-12, "diff {diff}");
        }

        #[test]
        fn exp_is_rotation(phi in vec3_strategy(10.0 / 3f64.sqrt())) {
            let c = so3_exp(&phi);
            prop_assert!(RotMat::try_from_matrix(c.into_inner()).is_ok());
        }

        #[test]
        fn log_inverts_exp(dir in vec3_strategy(1.0), angle in 0.0..(PI - 0.01)) {
            prop_assume!(dir.norm() > 1e-3);
            let phi = dir.normalize() * angle;
            let c = so3_exp(&phi);
            let back = so3_exp(&so3_log(&c).unwrap());
            prop_assert!((back.into_inner() - c.into_inner()).norm() < 1e-9);
        }

        #[test]
        fn log_norm_matches_trace_formula(phi in vec3_strategy(0.5)) {
            let c = so3_exp(&phi);
            let trace_angle = ((c.matrix().trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            let n = so3_log(&c).unwrap().norm();
            prop_assert!((n - trace_angle).abs() < 1e-7, "{n} vs {trace_angle}");
        }

        #[test]
        fn euler_roundtrip(r in -3.0..3.0f64, p in -1.5..1.5f64, y in -3.0..3.0f64) {
            let e = EulerAngles::new(r, p, y);
            let back = dcm_to_euler(&euler_to_dcm(&e)).unwrap();
            prop_assert!((back.roll - r).abs() < 1e-10);
            prop_assert!((back.pitch - p).abs() < 1e-10);
            prop_assert!((back.yaw - y).abs() < 1e-10);
        }

        #[test]
        fn vec_kron_identity(a in mat3_strategy(), b in mat3_strategy(), c in mat3_strategy()) {
            let lhs = vec9(&(a * b * c));
            let to_d = |m: &Mat3| DMatrix::from_column_slice(3, 3, m.as_slice());
            let k = kron(&to_d(&c.transpose()), &to_d(&a));
            let rhs = &k * DMatrix::from_column_slice(9, 1, vec9(&b).as_slice());
            for i in 0..9 {
                prop_assert!((lhs[i] - rhs[(i, 0)]).abs() < 1e-12);
            }
        }

        #[test]
        fn qr_construct_then_decompose(phi in vec3_strategy(1.7), d in proptest::collection::vec(0.2..3.0f64, 3), u in proptest::collection::vec(-1.0..1.0f64, 3)) {
            let q0 = so3_exp(&phi);
            let r0 = Mat3::new(d[0], u[0], u[1], 0.0, d[1], u[2], 0.0, 0.0, d[2]);
            let k = q0 * r0;
            let (q, r) = qr_posdiag(&k).unwrap();
            prop_assert!((q.into_inner() - q0.into_inner()).norm() < 1e-10);
            prop_assert!((r - r0).norm() < 1e-10);
            prop_assert!((k - q * r).norm() < 1e-12 * k.norm());
            prop_assert!(r[(0, 0)] > 0.0 && r[(1, 1)] > 0.0 && r[(2, 2)] > 0.0);
        }
    }
}
