//! Rotations, rigid poses, pinhole intrinsics and point projection.
//!
//! Poses are world-to-camera throughout: `x_cam = R * x_world + t`.
//! File formats that store camera-to-world poses convert at the I/O
//! boundary (see `dataio`).

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|q| - 1` accepted by operations that require a unit quaternion.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Hamilton quaternion stored as `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn norm_squared(&self) -> f64 {
        self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }

    pub fn ensure_unit(&self) -> Result<()> {
        if self.is_unit() && self.to_array().iter().all(|c| c.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "quaternion {:?} is not unit (norm {})",
                self.to_array(),
                self.norm()
            )))
        }
    }

    pub fn normalize(&self) -> Result<Quaternion> {
        let n = self.norm();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::DegenerateQuaternion(n));
        }
        Ok(Quaternion::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    pub fn conjugate(&self) -> Quaternion {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn neg(&self) -> Quaternion {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self * rhs`; the rotation of the result applies `rhs` first.
    pub fn mul(&self, rhs: &Quaternion) -> Quaternion {
        let (a, b) = (self, rhs);
        Quaternion::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    pub fn dot(&self, rhs: &Quaternion) -> f64 {
        self.w * rhs.w + self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Quaternion> {
        let n = axis.norm();
        if !(n > 1e-12) {
            return Err(Error::InvalidArgument("zero rotation axis".into()));
        }
        let a = axis / n;
        let (s, c) = (0.5 * angle).sin_cos();
        Ok(Quaternion::new(c, a.x * s, a.y * s, a.z * s))
    }

    /// Rotation angle in radians, in `[0, pi]`, insensitive to the sign of `q`.
    pub fn angle(&self) -> f64 {
        let v = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        2.0 * v.atan2(self.w.abs())
    }

    /// Rotation matrix of a unit quaternion.
    pub fn to_rotation_matrix(&self) -> Result<Matrix3<f64>> {
        self.ensure_unit()?;
        Ok(self.rotation_matrix_unchecked())
    }

    /// The polynomial rotation formula evaluated at `self` without checking the norm.
    pub(crate) fn rotation_matrix_unchecked(&self) -> Matrix3<f64> {
        let Quaternion { w, x, y, z } = *self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Quaternion of a rotation matrix (Shepperd's method), with `w >= 0`.
    pub fn from_rotation_matrix(r: &Matrix3<f64>) -> Quaternion {
        let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Quaternion::new(
                0.25 * s,
                (r[(2, 1)] - r[(1, 2)]) / s,
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(1, 0)] - r[(0, 1)]) / s,
            )
        } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
            let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
            Quaternion::new(
                (r[(2, 1)] - r[(1, 2)]) / s,
                0.25 * s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
            )
        } else if r[(1, 1)] > r[(2, 2)] {
            let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
            Quaternion::new(
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                0.25 * s,
                (r[(1, 2)] + r[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
            Quaternion::new(
                (r[(1, 0)] - r[(0, 1)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
                (r[(1, 2)] + r[(2, 1)]) / s,
                0.25 * s,
            )
        };
        let q = if q.w < 0.0 { q.neg() } else { q };
        // renormalize away round-off from non-exactly-orthonormal inputs
        q.normalize().unwrap_or(Quaternion::IDENTITY)
    }
}

/// Normalizes `q` to unit length.
pub fn quat_normalize(q: Quaternion) -> Result<Quaternion> {
    q.normalize()
}

/// Rotation matrix of a unit quaternion.
pub fn quat_to_rotmat(q: Quaternion) -> Result<Matrix3<f64>> {
    q.to_rotation_matrix()
}

/// Rigid world-to-camera transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Quaternion,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Quaternion, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Quaternion::IDENTITY, Vector3::zeros())
    }

    pub fn validate(&self) -> Result<()> {
        self.rotation.ensure_unit()?;
        if self.translation.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidArgument("non-finite translation".into()))
        }
    }

    pub fn rotation_matrix(&self) -> Result<Matrix3<f64>> {
        self.rotation.to_rotation_matrix()
    }

    /// `x -> R x + t`.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        Ok(self.rotation_matrix()? * p + self.translation)
    }

    /// `self * rhs` as homogeneous matrices: `rhs` is applied first.
    pub fn compose(&self, rhs: &Pose) -> Result<Pose> {
        let r = self.rotation_matrix()?;
        rhs.rotation.ensure_unit()?;
        let q = self.rotation.mul(&rhs.rotation).normalize()?;
        Ok(Pose::new(q, r * rhs.translation + self.translation))
    }

    pub fn inverse(&self) -> Result<Pose> {
        let r = self.rotation_matrix()?;
        Ok(Pose::new(
            self.rotation.conjugate(),
            -(r.transpose() * self.translation),
        ))
    }

    /// Camera center in world coordinates (for a world-to-camera pose).
    pub fn camera_center(&self) -> Result<Vector3<f64>> {
        Ok(-(self.rotation_matrix()?.transpose() * self.translation))
    }

    pub fn to_matrix(&self) -> Result<Matrix4<f64>> {
        let r = self.rotation_matrix()?;
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        Ok(m)
    }

    /// Pose of a homogeneous rigid matrix. The rotation block must be
    /// orthonormal within `tol` (Frobenius norm of `R Rᵀ - I`).
    pub fn from_matrix(m: &Matrix4<f64>, tol: f64) -> Result<Pose> {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let err = (r * r.transpose() - Matrix3::identity()).norm();
        if !(err <= tol) || r.determinant() <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "rotation block is not a proper rotation (|RRᵀ - I| = {err:e})"
            )));
        }
        let t: Vector3<f64> = m.fixed_view::<3, 1>(0, 3).into_owned();
        Ok(Pose::new(Quaternion::from_rotation_matrix(&r), t))
    }

    /// Rotation angle (rad) and translation distance between two poses.
    pub fn distance(&self, other: &Pose) -> Result<(f64, f64)> {
        let rel = self.inverse()?.compose(other)?;
        Ok((rel.rotation.angle(), rel.translation.norm()))
    }

    /// Same pose with the rotation renormalized to unit length.
    pub fn normalized(&self) -> Result<Pose> {
        Ok(Pose::new(self.rotation.normalize()?, self.translation))
    }

    pub fn to_params(&self) -> [f64; 7] {
        let q = self.rotation;
        let t = self.translation;
        [q.w, q.x, q.y, q.z, t.x, t.y, t.z]
    }

    pub fn from_params(p: &[f64; 7]) -> Pose {
        Pose::new(
            Quaternion::new(p[0], p[1], p[2], p[3]),
            Vector3::new(p[4], p[5], p[6]),
        )
    }
}

/// Pinhole camera without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near: 0.01,
            far: 100.0,
        }
    }

    pub fn with_clip(mut self, near: f64, far: f64) -> Self {
        self.near = near;
        self.far = far;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx.is_finite()
            && self.cy.is_finite()
            && self.near > 0.0
            && self.near < self.far
            && self.width >= 1
            && self.height >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Result of projecting one point; `visible` is false for points at or
/// in front of the near plane, in which case `u`/`v` are not meaningful.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointProjection {
    pub u: f64,
    pub v: f64,
    pub z: f64,
    pub visible: bool,
}

pub fn project_point(
    x_world: &Vector3<f64>,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<PointProjection> {
    let xc = pose.transform_point(x_world)?;
    Ok(project_camera_point(&xc, k))
}

pub(crate) fn project_camera_point(xc: &Vector3<f64>, k: &CameraIntrinsics) -> PointProjection {
    if xc.z <= k.near {
        return PointProjection {
            u: f64::NAN,
            v: f64::NAN,
            z: xc.z,
            visible: false,
        };
    }
    PointProjection {
        u: k.fx * xc.x / xc.z + k.cx,
        v: k.fy * xc.y / xc.z + k.cy,
        z: xc.z,
        visible: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> Quaternion {
        loop {
            let q = Quaternion::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if q.norm() > 0.1 {
                return q.normalize().unwrap();
            }
        }
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        Pose::new(
            random_unit(rng),
            Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            ),
        )
    }

    #[test]
    fn identity_quaternion_gives_identity_matrix() {
        let r = quat_to_rotmat(Quaternion::IDENTITY).unwrap();
        assert_eq!(r, Matrix3::identity());
    }

    #[test]
    fn half_turn_about_z() {
        let r = quat_to_rotmat(Quaternion::new(0.0, 0.0, 0.0, 1.0)).unwrap();
        assert_eq!(r, Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0)));
    }

    #[test]
    fn random_rotations_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let r = quat_to_rotmat(random_unit(&mut rng)).unwrap();
            assert!((r * r.transpose() - Matrix3::identity()).amax() < 1e-6);
            assert!((r.determinant() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn non_unit_rotation_is_rejected() {
        let err = quat_to_rotmat(Quaternion::new(2.0, 0.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            quat_normalize(Quaternion::new(2.0, 0.0, 0.0, 0.0)).unwrap(),
            Quaternion::IDENTITY
        );
        let q = quat_normalize(Quaternion::new(1.0, 1.0, 1.0, 1.0)).unwrap();
        for c in q.to_array() {
            assert!((c - 0.5).abs() < 1e-15);
        }
        assert!(matches!(
            quat_normalize(Quaternion::new(0.0, 0.0, 0.0, 0.0)),
            Err(Error::DegenerateQuaternion(_))
        ));
    }

    #[test]
    fn projection_examples() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100);
        let id = Pose::identity();
        let p = project_point(&Vector3::new(0.0, 0.0, 2.0), &id, &k).unwrap();
        assert_eq!((p.u, p.v, p.z, p.visible), (50.0, 50.0, 2.0, true));
        let p = project_point(&Vector3::new(1.0, 0.0, 2.0), &id, &k).unwrap();
        assert_eq!((p.u, p.v, p.z), (100.0, 50.0, 2.0));
        let p = project_point(&Vector3::new(0.0, 0.0, -1.0), &id, &k).unwrap();
        assert!(!p.visible);
    }

    #[test]
    fn compose_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let p = random_pose(&mut rng);
            let q = random_pose(&mut rng);
            let c = Pose::identity().compose(&p).unwrap();
            assert!(c.distance(&p).unwrap().0 < 1e-9);
            let id = p.compose(&p.inverse().unwrap()).unwrap();
            assert!(id.rotation.angle() < 1e-6 && id.translation.norm() < 1e-6);

            let via_quat = p.compose(&q).unwrap().to_matrix().unwrap();
            let via_mat = p.to_matrix().unwrap() * q.to_matrix().unwrap();
            assert!((via_quat - via_mat).amax() < 1e-6);
        }
    }

    #[test]
    fn from_matrix_rejects_non_rotation() {
        let mut m = Matrix4::identity();
        m[(0, 0)] = 1.1;
        assert!(Pose::from_matrix(&m, 1e-3).is_err());
    }

    proptest! {
        #[test]
        fn sign_of_quaternion_does_not_matter(w in -1.0..1.0f64, x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64) {
            let q = Quaternion::new(w, x, y, z);
            prop_assume!(q.norm() > 1e-3);
            let q = q.normalize().unwrap();
            let a = quat_to_rotmat(q).unwrap();
            let b = quat_to_rotmat(q.neg()).unwrap();
            prop_assert!((a - b).amax() < 1e-12);
        }

        #[test]
        fn matrix_round_trip(w in -1.0..1.0f64, x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64) {
            let q = Quaternion::new(w, x, y, z);
            prop_assume!(q.norm() > 1e-3);
            let r = quat_to_rotmat(q.normalize().unwrap()).unwrap();
            let back = quat_to_rotmat(Quaternion::from_rotation_matrix(&r)).unwrap();
            prop_assert!((r - back).amax() < 1e-6);
        }

        #[test]
        fn projection_is_scale_consistent(x in -2.0..2.0f64, y in -2.0..2.0f64, z in 0.5..5.0f64, s in 0.1..10.0f64) {
            let k = CameraIntrinsics::new(120.0, 110.0, 31.5, 24.5, 64, 48).with_clip(0.01, 1000.0);
            let a = project_camera_point(&Vector3::new(x, y, z), &k);
            let b = project_camera_point(&Vector3::new(x * s, y * s, z * s), &k);
            prop_assert!((a.u - b.u).abs() < 1e-9 && (a.v - b.v).abs() < 1e-9);
        }
    }
}
