//! Cameras, similarity transforms and point clouds.
//!
//! Poses are stored world→camera: a world point `p` maps to camera space as
//! `rotation * p + translation`, and the camera looks down +Z.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Depth at or below which a point counts as behind the camera.
pub const BEHIND_CAMERA_DEPTH: f64 = 1e-8;

const ORTHO_TOL: f64 = 1e-9;

fn check_rotation(rotation: &Matrix3<f64>, what: &str) -> Result<()> {
    let gram = rotation.transpose() * rotation - Matrix3::identity();
    if gram.amax() > ORTHO_TOL || (rotation.determinant() - 1.0).abs() > ORTHO_TOL {
        return Err(Error::InvalidInput(format!("{what}: rotation is not a proper orthonormal matrix")));
    }
    Ok(())
}

/// Pinhole camera with a world→camera pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub id: u32,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: u32,
        width: u32,
        height: u32,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let cam = Self { id, width, height, fx, fy, cx, cy, rotation, translation };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::InvalidInput(format!("camera {}: image must be at least 16x16", self.id)));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput(format!("camera {}: focal lengths must be positive", self.id)));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(format!("camera {}: non-finite translation", self.id)));
        }
        check_rotation(&self.rotation, &format!("camera {}", self.id))
    }

    /// Camera placed at `eye` looking at `target`, with `up` roughly vertical in the image.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        id: u32,
        width: u32,
        height: u32,
        focal: f64,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        // image x to the right, image y down
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(id, width, height, focal, focal, width as f64 / 2.0, height as f64 / 2.0, rotation, translation)
    }

    pub fn to_camera_frame(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Pixel coordinates of a world point, or `None` when it sits behind the camera.
    pub fn project(&self, point: &Vector3<f64>) -> Option<Vector2<f64>> {
        let p = self.to_camera_frame(point);
        if p.z <= BEHIND_CAMERA_DEPTH {
            return None;
        }
        Some(Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    pub fn in_bounds(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x < self.width as f64 && pixel.y < self.height as f64
    }
}

/// Free-function form of [`Camera::project`].
pub fn project(camera: &Camera, point: &Vector3<f64>) -> Option<Vector2<f64>> {
    camera.project(point)
}

/// `x ↦ scale · rotation · x + translation`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn new(scale: f64, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput(format!("similarity scale must be positive, got {scale}")));
        }
        check_rotation(&rotation, "similarity")?;
        Ok(Self { scale, rotation, translation })
    }

    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_parts(scale: f64, rotation: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { scale, rotation: rotation.to_rotation_matrix().into_inner(), translation }
    }

    pub fn rigid(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { scale: 1.0, rotation, translation }
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let inv_scale = 1.0 / self.scale;
        Self { scale: inv_scale, rotation: rt, translation: -(inv_scale * (rt * self.translation)) }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
        }
    }

    /// Geodesic angle (radians) between the rotation parts.
    pub fn rotation_angle_to(&self, other: &Self) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    /// Re-orthonormalizes the rotation to remove accumulated round-off.
    pub fn renormalized(&self) -> Self {
        let q = self.quaternion();
        Self::from_parts(self.scale, &q, self.translation)
    }

    /// Inverse of [`Self::to_array`]; validates the result.
    pub fn from_array(a: &[f64; 13]) -> Result<Self> {
        let rotation = Matrix3::new(a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8], a[9]);
        Self::new(a[0], rotation, Vector3::new(a[10], a[11], a[12]))
    }

    /// `[scale, rotation (row-major), translation]`.
    pub fn to_array(&self) -> [f64; 13] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            self.scale,
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.x,
            t.y,
            t.z,
        ]
    }
}

/// Rotation about `axis` (need not be normalized) by `degrees`.
pub fn rotation_about(axis: Vector3<f64>, degrees: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), degrees.to_radians()).into_inner()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, colors: Option<Vec<Vector3<f64>>>) -> Result<Self> {
        if let Some(c) = &colors {
            if c.len() != points.len() {
                return Err(Error::LengthMismatch { left: points.len(), right: c.len() });
            }
        }
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidInput("point cloud contains non-finite coordinates".into()));
        }
        Ok(Self { points, colors })
    }

    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        Self { points, colors: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn color(&self, i: usize) -> Option<Vector3<f64>> {
        self.colors.as_ref().map(|c| c[i])
    }

    pub fn centroid(&self) -> Vector3<f64> {
        if self.points.is_empty() {
            return Vector3::zeros();
        }
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }

    /// Length of the axis-aligned bounding box diagonal.
    pub fn bbox_diagonal(&self) -> f64 {
        let Some(first) = self.points.first() else { return 0.0 };
        let (mut lo, mut hi) = (*first, *first);
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (hi - lo).norm()
    }

    /// Keeps the points at `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self.colors.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
        }
    }
}

/// Maps every point through `s`; colors are carried over untouched.
pub fn apply_similarity(s: &SimilarityTransform, cloud: &PointCloud) -> PointCloud {
    PointCloud { points: cloud.points.iter().map(|p| s.apply_point(p)).collect(), colors: cloud.colors.clone() }
}

/// Re-expresses a camera in the frame reached through `s`, so that
/// `project(new_cam, s(p)) == project(cam, p)`.
///
/// Camera-space coordinates get multiplied by `s.scale`, which projection ignores.
pub fn apply_similarity_to_camera(s: &SimilarityTransform, camera: &Camera) -> Camera {
    let rotation = camera.rotation * s.rotation.transpose();
    let translation = s.scale * camera.translation - rotation * s.translation;
    // rotation products drift off SO(3) slowly; snap back so the invariants keep holding
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rotation))
        .to_rotation_matrix()
        .into_inner();
    Camera { rotation, translation, ..camera.clone() }
}

/// 2D observation of a dense-cloud point in one of the reference views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match2D3D {
    pub view_id: u32,
    pub pixel: [f64; 2],
    pub point_index: usize,
}

/// 3D-3D seed pair: `source_index` into the dense cloud, `target_index` into the reference cloud.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedCorrespondence {
    pub source_index: usize,
    pub target_index: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn simple_camera() -> Camera {
        Camera::new(0, 100, 100, 100.0, 100.0, 50.0, 50.0, Matrix3::identity(), Vector3::zeros()).unwrap()
    }

    #[test]
    fn project_principal_point_and_offset() {
        let cam = simple_camera();
        let px = cam.project(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(px, Vector2::new(50.0, 50.0));
        let px = cam.project(&Vector3::new(0.1, 0.0, 1.0)).unwrap();
        assert_relative_eq!(px, Vector2::new(60.0, 50.0), epsilon = 1e-12);
        assert!(cam.project(&Vector3::new(0.0, 0.0, -1.0)).is_none());
        assert!(cam.project(&Vector3::new(0.0, 0.0, 0.0)).is_none());
    }

    #[test]
    fn project_depth_scale_invariant() {
        let cam = simple_camera();
        let p = Vector3::new(0.3, -0.2, 2.0);
        let a = cam.project(&p).unwrap();
        for lambda in [0.5, 3.0, 17.0] {
            assert_relative_eq!(cam.project(&(p * lambda)).unwrap(), a, epsilon = 1e-9);
        }
    }

    #[test]
    fn similarity_examples() {
        let cloud = PointCloud::from_points(vec![Vector3::new(1.0, 1.0, 1.0)]);
        let scaled =
            apply_similarity(&SimilarityTransform::new(2.0, Matrix3::identity(), Vector3::zeros()).unwrap(), &cloud);
        assert_relative_eq!(scaled.points[0], Vector3::new(2.0, 2.0, 2.0));

        let s = SimilarityTransform::new(1.0, rotation_about(Vector3::z(), 90.0), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let out = apply_similarity(&s, &PointCloud::from_points(vec![Vector3::new(1.0, 0.0, 0.0)]));
        assert_relative_eq!(out.points[0], Vector3::new(1.0, 1.0, 0.0), epsilon = 1e-12);

        let same = apply_similarity(&SimilarityTransform::identity(), &cloud);
        assert_eq!(same, cloud);
    }

    #[test]
    fn camera_transfer_identity_is_noop() {
        let cam =
            Camera::look_at(3, 64, 48, 50.0, Vector3::new(2.0, 1.0, 1.0), Vector3::zeros(), Vector3::z()).unwrap();
        let moved = apply_similarity_to_camera(&SimilarityTransform::identity(), &cam);
        assert_relative_eq!(moved.rotation, cam.rotation, epsilon = 1e-12);
        assert_relative_eq!(moved.translation, cam.translation, epsilon = 1e-12);
    }

    #[test]
    fn camera_transfer_pure_scale() {
        let cam =
            Camera::look_at(1, 64, 48, 50.0, Vector3::new(3.0, 0.5, 1.0), Vector3::zeros(), Vector3::z()).unwrap();
        let s = SimilarityTransform::new(2.0, Matrix3::identity(), Vector3::zeros()).unwrap();
        let moved = apply_similarity_to_camera(&s, &cam);
        for i in 0..100 {
            let t = i as f64 * 0.01;
            let p = Vector3::new(t.sin() * 0.5, (3.0 * t).cos() * 0.5, t - 0.5);
            let a = cam.project(&p).unwrap();
            let b = moved.project(&s.apply_point(&p)).unwrap();
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn invalid_camera_rejected() {
        let bad = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Camera::new(0, 64, 64, 10.0, 10.0, 32.0, 32.0, bad, Vector3::zeros()).is_err());
        assert!(Camera::new(0, 8, 64, 10.0, 10.0, 32.0, 32.0, Matrix3::identity(), Vector3::zeros()).is_err());
        assert!(Camera::new(0, 64, 64, 0.0, 10.0, 32.0, 32.0, Matrix3::identity(), Vector3::zeros()).is_err());
    }

    #[test]
    fn cloud_color_length_checked() {
        let pts = vec![Vector3::zeros(); 3];
        assert!(PointCloud::new(pts.clone(), Some(vec![Vector3::zeros(); 2])).is_err());
        assert!(PointCloud::new(pts, Some(vec![Vector3::zeros(); 3])).is_ok());
    }
}
