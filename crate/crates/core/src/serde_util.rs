//! Row-major `[[f64; 3]; 3]` / `[f64; 3]` encodings for matrices in config
//! and report files.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::rotation::{Mat3, RotMat, Vec3};

pub type Rows3 = [[f64; 3]; 3];

pub fn mat_to_rows(m: &Mat3) -> Rows3 {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

pub fn rows_to_mat(r: &Rows3) -> Mat3 {
    Mat3::new(
        r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
    )
}

impl TryFrom<Rows3> for RotMat {
    type Error = crate::error::Error;
    fn try_from(rows: Rows3) -> Result<Self, Self::Error> {
        RotMat::try_from_matrix(rows_to_mat(&rows))
    }
}

impl From<RotMat> for Rows3 {
    fn from(c: RotMat) -> Self {
        mat_to_rows(c.matrix())
    }
}

pub mod mat3 {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Mat3, s: S) -> Result<S::Ok, S::Error> {
        mat_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat3, D::Error> {
        Ok(rows_to_mat(&Rows3::deserialize(d)?))
    }
}

pub mod vec3 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::new(a[0], a[1], a[2]))
    }
}
