//! Pinhole camera model, camera-to-world poses and the unproject/project
//! primitives used by multi-view verification and mapping.
//!
//! Pixel `(u, v)` denotes column `u`, row `v`; integer pixel indices are the
//! sample positions, so the principal ray passes through pixel `(cx, cy)`.
//! Depth is z-depth along the optical axis. Camera frame: x right, y down,
//! z forward.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{check_dims, DepthImage, LabelImage};

/// Default meters-per-radian weight blending rotation into [`pose_distance`].
pub const DEFAULT_ROTATION_WEIGHT: f64 = 0.5;

const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid(
                "intrinsics",
                "focal lengths must be finite and positive",
            ));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::invalid(
                "intrinsics",
                format!(
                    "principal point ({}, {}) outside {}x{} image",
                    self.cx, self.cy, self.width, self.height
                ),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("pose", "non-finite entries"));
        }
        let gram = rotation.transpose() * rotation;
        if (gram - Matrix3::identity()).amax() > ORTHONORMAL_TOL {
            return Err(Error::invalid("pose", "rotation columns are not orthonormal"));
        }
        if (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::invalid("pose", "rotation determinant is not +1"));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose from a row-major 4x4 camera-to-world matrix.
    pub fn from_row_major(m: &[[f64; 4]; 4]) -> Result<Self> {
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::invalid("pose", "last row must be [0, 0, 0, 1]"));
        }
        let rotation = Matrix3::from_fn(|r, c| m[r][c]);
        let translation = Vector3::new(m[0][3], m[1][3], m[2][3]);
        Self::new(rotation, translation)
    }

    pub fn to_row_major(&self) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for (r, row) in out.iter_mut().enumerate().take(3) {
            for (c, v) in row.iter_mut().enumerate().take(3) {
                *v = self.rotation[(r, c)];
            }
            row[3] = self.translation[r];
        }
        out[3][3] = 1.0;
        out
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let m = self.to_row_major();
        Matrix4::from_fn(|r, c| m[r][c])
    }

    /// Camera at `eye` looking at `target`. `up` is a world-space hint; the
    /// camera y axis points away from it (image rows grow downward).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("pose", "eye and target coincide"))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-9)
            .ok_or_else(|| Error::invalid("pose", "up hint is parallel to the view direction"))?;
        let down = forward.cross(&right);
        Self::new(Matrix3::from_columns(&[right, down, forward]), eye)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Rotation geodesic angle to `other`, in radians.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        let relative = self.rotation.transpose() * other.rotation;
        let cos = ((relative.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        cos.acos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub position: Vector3<f64>,
    pub class_id: u16,
}

/// Points unprojected from one frame; `source_frame` applies to all of them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledPointCloud {
    pub source_frame: String,
    pub points: Vec<LabeledPoint>,
}

impl LabeledPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A real-valued pixel position with its camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub z: f64,
}

impl Projection {
    /// Nearest-integer pixel.
    pub fn pixel(&self) -> (usize, usize) {
        (self.u.round() as usize, self.v.round() as usize)
    }
}

/// Lifts every pixel with positive depth into world space, carrying its class
/// from `labels` (void when absent).
pub fn unproject(
    frame_id: &str,
    depth: &DepthImage,
    intr: &Intrinsics,
    pose: &Pose,
    labels: Option<&LabelImage>,
) -> Result<LabeledPointCloud> {
    check_dims("depth", intr.dims(), depth.dims())?;
    if let Some(labels) = labels {
        check_dims("labels", intr.dims(), labels.dims())?;
    }
    let mut points = Vec::new();
    for v in 0..intr.height {
        for u in 0..intr.width {
            let d = *depth.get(u, v);
            if d <= 0.0 {
                continue;
            }
            let camera = Vector3::new(
                d * (u as f64 - intr.cx) / intr.fx,
                d * (v as f64 - intr.cy) / intr.fy,
                d,
            );
            points.push(LabeledPoint {
                position: pose.camera_to_world(&camera),
                class_id: labels.map_or(0, |l| *l.get(u, v)),
            });
        }
    }
    Ok(LabeledPointCloud {
        source_frame: frame_id.to_string(),
        points,
    })
}

/// Projects a world point into the image. `None` when the point is behind
/// the camera or its nearest pixel falls outside the image.
pub fn project_point(p: &Vector3<f64>, intr: &Intrinsics, pose: &Pose) -> Option<Projection> {
    let c = pose.world_to_camera(p);
    if c.z <= 0.0 {
        return None;
    }
    let u = intr.fx * c.x / c.z + intr.cx;
    let v = intr.fy * c.y / c.z + intr.cy;
    let (ur, vr) = (u.round(), v.round());
    if !(ur >= 0.0 && vr >= 0.0 && ur < intr.width as f64 && vr < intr.height as f64) {
        return None;
    }
    Some(Projection { u, v, z: c.z })
}

/// Translation distance plus `rotation_weight` times the rotation geodesic
/// angle.
pub fn pose_distance(a: &Pose, b: &Pose, rotation_weight: f64) -> f64 {
    (a.translation - b.translation).norm() + rotation_weight * a.rotation_angle_to(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn intr() -> Intrinsics {
        Intrinsics::new(100.0, 110.0, 32.0, 24.0, 64, 48).unwrap()
    }

    #[test]
    fn principal_ray_unprojects_on_axis() {
        let mut depth = DepthImage::filled(64, 48, 0.0);
        depth.set(32, 24, 2.0);
        let cloud = unproject("f", &depth, &intr(), &Pose::identity(), None).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud.points[0].position, Vector3::new(0.0, 0.0, 2.0));
        assert_eq!(cloud.points[0].class_id, 0);
    }

    #[test]
    fn unit_offset_pixel() {
        // fx = 1 so that pixel cx + fx is inside the image.
        let intr = Intrinsics::new(1.0, 1.0, 2.0, 1.0, 4, 3).unwrap();
        let mut depth = DepthImage::filled(4, 3, 0.0);
        depth.set(3, 1, 1.0);
        let cloud = unproject("f", &depth, &intr, &Pose::identity(), None).unwrap();
        assert_eq!(cloud.points[0].position, Vector3::new(1.0, 0.0, 1.0));
    }

    #[test]
    fn zero_depth_emits_nothing() {
        let depth = DepthImage::filled(64, 48, 0.0);
        let cloud = unproject("f", &depth, &intr(), &Pose::identity(), None).unwrap();
        assert!(cloud.is_empty());
    }

    #[test]
    fn label_dims_checked() {
        let depth = DepthImage::filled(64, 48, 1.0);
        let labels = LabelImage::filled(10, 10, 1);
        let err = unproject("f", &depth, &intr(), &Pose::identity(), Some(&labels)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { ref layer, .. } if layer == "labels"));
    }

    #[test]
    fn project_on_axis_and_behind() {
        let p = project_point(&Vector3::new(0.0, 0.0, 2.0), &intr(), &Pose::identity()).unwrap();
        assert_eq!((p.u, p.v, p.z), (32.0, 24.0, 2.0));
        assert!(project_point(&Vector3::new(0.0, 0.0, -1.0), &intr(), &Pose::identity()).is_none());
        assert!(project_point(&Vector3::new(10.0, 0.0, 1.0), &intr(), &Pose::identity()).is_none());
    }

    #[test]
    fn pose_distance_cases() {
        let a = Pose::identity();
        assert_eq!(pose_distance(&a, &a, DEFAULT_ROTATION_WEIGHT), 0.0);
        let b = Pose::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(pose_distance(&a, &b, DEFAULT_ROTATION_WEIGHT), 1.0);
        let rz = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let c = Pose::new(rz, Vector3::zeros()).unwrap();
        let d = pose_distance(&a, &c, DEFAULT_ROTATION_WEIGHT);
        assert!((d - 0.5 * FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_rotation() {
        let scaled = Matrix3::identity() * 2.0;
        assert!(Pose::new(scaled, Vector3::zeros()).is_err());
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::new(reflect, Vector3::zeros()).is_err());
    }

    #[test]
    fn intrinsics_invariants() {
        assert!(Intrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
    }

    #[test]
    fn look_at_faces_target() {
        let eye = Vector3::new(1.0, 2.0, 1.5);
        let pose = Pose::look_at(eye, Vector3::new(4.0, 2.0, 1.5), Vector3::z()).unwrap();
        let c = pose.world_to_camera(&Vector3::new(4.0, 2.0, 1.5));
        assert!((c - Vector3::new(0.0, 0.0, 3.0)).norm() < 1e-12);
        // Points above the camera project to smaller row indices.
        let up = pose.world_to_camera(&Vector3::new(4.0, 2.0, 2.5));
        assert!(up.y < 0.0);
    }

    #[test]
    fn row_major_roundtrip() {
        let pose = Pose::look_at(Vector3::new(0.3, -1.0, 2.0), Vector3::new(1.0, 1.0, 0.5), Vector3::z()).unwrap();
        let back = Pose::from_row_major(&pose.to_row_major()).unwrap();
        assert_eq!(pose, back);
    }
}
