//! Pinhole camera model and rigid-body poses.

use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let intr = Self { fx, fy, cx, cy };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "intrinsics need positive finite focal lengths, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Parses `fx fy cx cy` (whitespace separated, `#` comments allowed).
    pub fn parse(text: &str) -> Result<Self> {
        let values: Vec<f64> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(|l| l.split_whitespace())
            .map(|tok| {
                tok.parse::<f64>().map_err(|e| Error::Parse {
                    context: "intrinsics".into(),
                    message: format!("{tok:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != 4 {
            return Err(Error::Parse {
                context: "intrinsics".into(),
                message: format!("expected 4 values (fx fy cx cy), found {}", values.len()),
            });
        }
        Self::new(values[0], values[1], values[2], values[3])
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        format!("{} {} {} {}\n", self.fx, self.fy, self.cx, self.cy)
    }

    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        )
    }

    /// Inverse projection of pixel `(u, v)` at metric depth `z`; `None` for `z <= 0`.
    #[inline]
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Option<Vector3<f64>> {
        if !(z > 0.0) {
            return None;
        }
        Some(Vector3::new(
            (u - self.cx) * z / self.fx,
            (v - self.cy) * z / self.fy,
            z,
        ))
    }
}

/// Rigid transform `x -> R x + t` with a unit-quaternion rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Se3Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Se3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Se3Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a pose from TUM-ordered quaternion components, normalizing them.
    pub fn from_tum(t: [f64; 3], q_xyzw: [f64; 4]) -> Result<Self> {
        let q = Quaternion::new(q_xyzw[3], q_xyzw[0], q_xyzw[1], q_xyzw[2]);
        let norm = q.norm();
        if !(norm.is_finite() && norm > 1e-12) || t.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "invalid pose t={t:?} q={q_xyzw:?}"
            )));
        }
        Ok(Self {
            rotation: UnitQuaternion::from_quaternion(q),
            translation: Vector3::new(t[0], t[1], t[2]),
        })
    }

    pub fn from_rotation_matrix(r: &Matrix3<f64>, t: Vector3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
        Self {
            rotation: UnitQuaternion::from_rotation_matrix(&rot),
            translation: t,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Se3Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Rotation angle in radians, `2·atan2(|vec|, |w|)`.
    pub fn rotation_angle(&self) -> f64 {
        quaternion_angle(&self.rotation)
    }

    /// Left update `(exp(ω)·R, exp(ω)·t + v)` for the tangent `[v, ω]`.
    pub fn left_update(&self, delta: &Vector6<f64>) -> Self {
        let v = Vector3::new(delta[0], delta[1], delta[2]);
        let w = Vector3::new(delta[3], delta[4], delta[5]);
        let dq = UnitQuaternion::from_scaled_axis(w);
        let mut rotation = dq * self.rotation;
        rotation.renormalize();
        Self {
            rotation,
            translation: dq * self.translation + v,
        }
    }

    /// TUM quaternion order `[qx, qy, qz, qw]`.
    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.i, q.j, q.k, q.w]
    }
}

impl fmt::Display for Se3Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.translation;
        let q = self.quaternion_xyzw();
        write!(
            f,
            "{:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            t.x, t.y, t.z, q[0], q[1], q[2], q[3]
        )
    }
}

pub fn quaternion_angle(q: &UnitQuaternion<f64>) -> f64 {
    let q = q.quaternion();
    2.0 * q.vector().norm().atan2(q.w.abs())
}

/// Angle of the relative rotation between two poses, radians.
///
/// Expanded so that equal rotations give exactly zero.
pub fn rotation_distance(a: &Se3Pose, b: &Se3Pose) -> f64 {
    let (p, q) = (a.rotation.quaternion(), b.rotation.quaternion());
    let (pv, qv) = (p.vector(), q.vector());
    let v = (qv * p.w - pv * q.w) - pv.cross(&qv);
    let w = p.w * q.w + pv.dot(&qv);
    2.0 * v.norm().atan2(w.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(525.0, 520.0, 319.5, 239.5).unwrap()
    }

    #[test]
    fn backproject_principal_point() {
        let p = intr().backproject(319.5, 239.5, 2.0).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn backproject_unit_tangent() {
        let k = intr();
        let p = k.backproject(k.cx + k.fx, k.cy, 1.0).unwrap();
        assert_eq!(p, Vector3::new(1.0, 0.0, 1.0));
    }

    #[test]
    fn backproject_rejects_zero_depth() {
        assert!(intr().backproject(10.0, 10.0, 0.0).is_none());
    }

    #[test]
    fn project_backproject_round_trip() {
        let k = intr();
        for &(u, v, z) in &[(0.0, 0.0, 0.5), (100.25, 37.5, 3.0), (639.0, 479.0, 7.5)] {
            let p = k.project(&k.backproject(u, v, z).unwrap());
            assert_relative_eq!(p.x, u, epsilon = 1e-9);
            assert_relative_eq!(p.y, v, epsilon = 1e-9);
        }
    }

    #[test]
    fn non_unit_quaternion_is_normalized() {
        let p = Se3Pose::from_tum([1.0, 2.0, 3.0], [0.0, 0.0, 0.0, 2.0]).unwrap();
        assert_relative_eq!(p.rotation.quaternion().norm(), 1.0, epsilon = 1e-12);
        assert!(Se3Pose::from_tum([0.0; 3], [0.0; 4]).is_err());
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let p = Se3Pose::new(
            UnitQuaternion::from_euler_angles(0.1, -0.4, 0.7),
            Vector3::new(0.3, -1.0, 2.0),
        );
        let id = p.compose(&p.inverse());
        assert!(id.rotation_angle() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
    }

    #[test]
    fn intrinsics_parse() {
        let k = CameraIntrinsics::parse("# fx fy cx cy\n525 525\n319.5 239.5\n").unwrap();
        assert_eq!(k.fy, 525.0);
        assert!(CameraIntrinsics::parse("1 2 3").is_err());
        assert!(CameraIntrinsics::parse("0 1 2 3").is_err());
    }
}
