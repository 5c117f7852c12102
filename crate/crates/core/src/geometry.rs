//! Camera and 3D-box mathematics shared by augmentation, evaluation and the
//! simulation harness.
//!
//! Coordinates follow the KITTI camera frame: x right, y down, z forward.
//! Box locations are bottom-face centers; a box of height `h` spans
//! `[y - h, y]` vertically.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Orthonormality tolerance for rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Corners closer than this to the image plane reject a projection.
pub const MIN_PROJECTION_DEPTH: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),
    #[error("viewing angle undefined at the camera origin")]
    DegenerateAngle,
    #[error("box corner at depth {depth:.3} m is behind the camera")]
    BehindCamera { depth: f64 },
}

/// Wraps an angle into `(-pi, pi]`; `-pi` maps to `pi`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Signed smallest difference `a - b`, wrapped into `(-pi, pi]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// Rigid motion `p -> R p + T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        let t = Self { rotation, translation };
        t.validate()?;
        Ok(t)
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vec3::zeros() }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    /// Rotation by `yaw` about the camera y-axis followed by `translation`.
    pub fn from_yaw_translation(yaw: f64, translation: Vec3) -> Self {
        Self { rotation: rotation_about_y(yaw), translation }
    }

    /// Builds a transform from a row-major 3x4 `[R|T]` matrix.
    pub fn from_matrix3x4(m: &Matrix3x4<f64>) -> Result<Self, GeometryError> {
        let rotation = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = m.column(3).into_owned();
        Self::new(rotation, translation)
    }

    pub fn to_matrix3x4(&self) -> Matrix3x4<f64> {
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.set_column(3, &self.translation);
        m
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.rotation.iter().chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidTransform("non-finite entry".into()));
        }
        let gram = self.rotation.transpose() * self.rotation;
        let err = (gram - Matrix3::identity()).abs().max();
        if err > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidTransform(format!(
                "rotation is not orthonormal (max |R^T R - I| = {err:.3e})"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidTransform(format!(
                "rotation determinant {det} != +1"
            )));
        }
        Ok(())
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Closed-form inverse `[R^T | -R^T T]`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

pub fn rotation_about_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Intrinsic projection plus extrinsic pose of one camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub projection: Matrix3x4<f64>,
    pub extrinsic: RigidTransform,
    pub width: u32,
    pub height: u32,
}

impl CameraRig {
    pub fn new(
        projection: Matrix3x4<f64>,
        extrinsic: RigidTransform,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidTransform("image size must be positive".into()));
        }
        if projection.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidTransform("non-finite projection".into()));
        }
        extrinsic.validate()?;
        Ok(Self { projection, extrinsic, width, height })
    }

    /// Pinhole rig with zero skew and no stereo offset.
    pub fn pinhole(focal: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        let projection =
            Matrix3x4::new(focal, 0.0, cx, 0.0, 0.0, focal, cy, 0.0, 0.0, 0.0, 1.0, 0.0);
        Self { projection, extrinsic: RigidTransform::identity(), width, height }
    }

    pub fn with_extrinsic(mut self, extrinsic: RigidTransform) -> Self {
        self.extrinsic = extrinsic;
        self
    }

    /// Pixel coordinates of a camera-frame point. Caller guarantees `z > 0`.
    pub fn project_point(&self, p: &Vec3) -> (f64, f64) {
        let h = self.projection * Vector4::new(p.x, p.y, p.z, 1.0);
        (h.x / h.z, h.y / h.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox2D {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl BBox2D {
    pub fn new(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        Self { left, top, right, bottom }
    }

    pub fn width(&self) -> f64 {
        (self.right - self.left).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.bottom - self.top).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn clamp_to(&self, width: f64, height: f64) -> Self {
        let cx = |v: f64| v.clamp(0.0, width);
        let cy = |v: f64| v.clamp(0.0, height);
        Self {
            left: cx(self.left),
            top: cy(self.top),
            right: cx(self.right),
            bottom: cy(self.bottom),
        }
    }

    /// Half-open pixel index ranges `[x0, x1) x [y0, y1)` covered by the box,
    /// limited to a `width x height` raster.
    pub fn pixel_span(&self, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let lo = |v: f64, n: usize| (v.floor().max(0.0) as usize).min(n);
        let hi = |v: f64, n: usize| (v.ceil().max(0.0) as usize).min(n);
        let x0 = lo(self.left, width);
        let x1 = hi(self.right, width).max(x0);
        let y0 = lo(self.top, height);
        let y1 = hi(self.bottom, height).max(y0);
        (x0, x1, y0, y1)
    }
}

/// Box size in meters: height, width, length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub h: f64,
    pub w: f64,
    pub l: f64,
}

/// One annotated or predicted object in KITTI label layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label3D {
    pub class_name: String,
    pub truncation: f64,
    pub occlusion: u8,
    pub alpha: f64,
    pub bbox2d: BBox2D,
    pub dims: Dims,
    pub location: Vec3,
    pub rotation_y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl Label3D {
    /// Box center (the location is the bottom-face center).
    pub fn center(&self) -> Vec3 {
        self.location - Vec3::new(0.0, self.dims.h / 2.0, 0.0)
    }

    /// Observation angle, falling back to the value implied by `rotation_y`
    /// and the viewing ray when the stored alpha is the KITTI unknown marker
    /// or otherwise out of range.
    pub fn observation_angle(&self) -> f64 {
        if self.alpha.is_finite() && self.alpha.abs() <= PI {
            return self.alpha;
        }
        match viewing_angle(self.location.x, self.location.z) {
            Ok(theta) => alpha_from_rotation(self.rotation_y, theta),
            Err(_) => wrap_angle(self.rotation_y),
        }
    }

    pub fn has_valid_dims(&self) -> bool {
        self.dims.h > 0.0 && self.dims.w > 0.0 && self.dims.l > 0.0
    }
}

/// Moves a center from the source camera frame to the target camera frame:
/// `[R_t|T_t] * [R_s|T_s]^-1` on homogeneous coordinates.
pub fn transform_center(
    center: &Vec3,
    src: &RigidTransform,
    tgt: &RigidTransform,
) -> Result<Vec3, GeometryError> {
    src.validate()?;
    tgt.validate()?;
    let composed = tgt.to_homogeneous() * src.inverse().to_homogeneous();
    let p = composed * center.push(1.0);
    Ok(Vec3::new(p.x, p.y, p.z))
}

pub fn apply_horizontal_offset(center: &Vec3, x_offset: f64) -> Vec3 {
    Vec3::new(center.x + x_offset, center.y, center.z)
}

/// Ray direction of an object at lateral position `x` and depth `z`.
pub fn viewing_angle(x: f64, z: f64) -> Result<f64, GeometryError> {
    if x == 0.0 && z == 0.0 {
        return Err(GeometryError::DegenerateAngle);
    }
    Ok(wrap_angle(x.atan2(z)))
}

pub fn rotation_from_alpha(alpha: f64, theta: f64) -> f64 {
    wrap_angle(alpha + theta)
}

pub fn alpha_from_rotation(rotation_y: f64, theta: f64) -> f64 {
    wrap_angle(rotation_y - theta)
}

/// The eight corners of a label's 3D box in camera coordinates.
///
/// At `rotation_y = 0` the length axis points along +z and the width axis
/// along +x; the box is then rotated about y. Corners 0..4 are the bottom
/// face, 4..8 the top face, in matching order.
pub fn box3d_corners(label: &Label3D) -> [Vec3; 8] {
    let Dims { h, w, l } = label.dims;
    let rot = rotation_about_y(label.rotation_y);
    let (hw, hl) = (w / 2.0, l / 2.0);
    let footprint = [(hw, hl), (-hw, hl), (-hw, -hl), (hw, -hl)];
    let mut corners = [Vec3::zeros(); 8];
    for (i, &(x, z)) in footprint.iter().enumerate() {
        corners[i] = rot * Vec3::new(x, 0.0, z) + label.location;
        corners[i + 4] = rot * Vec3::new(x, -h, z) + label.location;
    }
    corners
}

/// Axis-aligned envelope of the projected corners, clamped to the image.
pub fn project_box(corners: &[Vec3], rig: &CameraRig) -> Result<BBox2D, GeometryError> {
    if let Some(c) = corners.iter().find(|c| c.z <= MIN_PROJECTION_DEPTH) {
        return Err(GeometryError::BehindCamera { depth: c.z });
    }
    let (mut left, mut top) = (f64::INFINITY, f64::INFINITY);
    let (mut right, mut bottom) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in corners {
        let (u, v) = rig.project_point(c);
        left = left.min(u);
        right = right.max(u);
        top = top.min(v);
        bottom = bottom.max(v);
    }
    Ok(BBox2D { left, top, right, bottom }.clamp_to(rig.width as f64, rig.height as f64))
}

/// Unclamped projected envelope, used to measure truncation.
pub fn project_box_unclamped(corners: &[Vec3], rig: &CameraRig) -> Result<BBox2D, GeometryError> {
    if let Some(c) = corners.iter().find(|c| c.z <= MIN_PROJECTION_DEPTH) {
        return Err(GeometryError::BehindCamera { depth: c.z });
    }
    let mut b = BBox2D::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in corners {
        let (u, v) = rig.project_point(c);
        b.left = b.left.min(u);
        b.right = b.right.max(u);
        b.top = b.top.min(v);
        b.bottom = b.bottom.max(v);
    }
    Ok(b)
}

pub fn iou2d(a: &BBox2D, b: &BBox2D) -> f64 {
    let iw = (a.right.min(b.right) - a.left.max(b.left)).max(0.0);
    let ih = (a.bottom.min(b.bottom) - a.top.max(b.top)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;
    use std::f64::consts::FRAC_PI_4;

    fn label(dims: Dims, loc: Vec3, ry: f64) -> Label3D {
        Label3D {
            class_name: "Car".into(),
            truncation: 0.0,
            occlusion: 0,
            alpha: 0.0,
            bbox2d: BBox2D::new(0.0, 0.0, 1.0, 1.0),
            dims,
            location: loc,
            rotation_y: ry,
            score: None,
        }
    }

    fn extents(corners: &[Vec3; 8]) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let mut x = [f64::INFINITY, f64::NEG_INFINITY];
        let mut y = x;
        let mut z = x;
        for c in corners {
            x = [x[0].min(c.x), x[1].max(c.x)];
            y = [y[0].min(c.y), y[1].max(c.y)];
            z = [z[0].min(c.z), z[1].max(c.z)];
        }
        (x, y, z)
    }

    #[test]
    fn transform_center_cases() {
        let c = Vec3::new(2.0, 1.0, 10.0);
        let id = RigidTransform::identity();
        assert_eq!(transform_center(&c, &id, &id).unwrap(), c);
        let shifted = RigidTransform::from_translation(Vec3::new(1.0, 0.0, 0.0));
        let out = transform_center(&c, &id, &shifted).unwrap();
        assert!((out - Vec3::new(3.0, 1.0, 10.0)).norm() < 1e-12);
        let rig = RigidTransform::from_yaw_translation(0.3, Vec3::new(0.5, -1.2, 3.0));
        assert!((transform_center(&c, &rig, &rig).unwrap() - c).norm() < 1e-9);
    }

    #[test]
    fn non_orthonormal_rotation_is_rejected() {
        let bad = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            RigidTransform::new(bad, Vec3::zeros()),
            Err(GeometryError::InvalidTransform(_))
        ));
        let reflection = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::new(reflection, Vec3::zeros()).is_err());
    }

    #[test]
    fn horizontal_offset_only_touches_x() {
        let c = Vec3::new(2.0, 1.0, 10.0);
        assert_eq!(apply_horizontal_offset(&c, 0.0), c);
        assert_eq!(apply_horizontal_offset(&c, 3.0), Vec3::new(5.0, 1.0, 10.0));
        let c = Vec3::new(-4.0, 1.6, 30.0);
        let out = apply_horizontal_offset(&c, -5.0);
        assert_eq!(out, Vec3::new(-9.0, 1.6, 30.0));
        assert_eq!(out.y.to_bits(), c.y.to_bits());
        assert_eq!(out.z.to_bits(), c.z.to_bits());
    }

    #[test]
    fn viewing_angle_cases() {
        assert_eq!(viewing_angle(0.0, 10.0).unwrap(), 0.0);
        assert!((viewing_angle(5.0, 5.0).unwrap() - FRAC_PI_4).abs() < 1e-12);
        assert!((viewing_angle(-5.0, 5.0).unwrap() + FRAC_PI_4).abs() < 1e-12);
        assert_eq!(viewing_angle(0.0, 0.0), Err(GeometryError::DegenerateAngle));
    }

    #[test]
    fn rotation_alpha_cases() {
        assert_eq!(rotation_from_alpha(0.0, 0.0), 0.0);
        assert!((rotation_from_alpha(FRAC_PI_2, FRAC_PI_4) - 3.0 * FRAC_PI_4).abs() < 1e-12);
        assert!((rotation_from_alpha(PI, FRAC_PI_2) + FRAC_PI_2).abs() < 1e-12);
        assert_eq!(alpha_from_rotation(0.0, 0.0), 0.0);
        assert_eq!(alpha_from_rotation(-FRAC_PI_2, FRAC_PI_2), PI);
    }

    #[test]
    fn wrap_maps_minus_pi_to_pi() {
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-12);
        for k in -5..5 {
            let a = 0.7 + 2.0 * PI * k as f64;
            assert!((wrap_angle(a) - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn corners_axis_aligned() {
        let dims = Dims { h: 2.0, w: 1.0, l: 4.0 };
        let l = label(dims, Vec3::new(0.0, 1.0, 10.0), 0.0);
        let (x, y, z) = extents(&box3d_corners(&l));
        assert_eq!(x, [-0.5, 0.5]);
        assert_eq!(y, [-1.0, 1.0]);
        assert_eq!(z, [8.0, 12.0]);

        let l = label(dims, Vec3::new(0.0, 1.0, 10.0), FRAC_PI_2);
        let (x, _, z) = extents(&box3d_corners(&l));
        assert!((x[0] + 2.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
        assert!((z[0] - 9.5).abs() < 1e-12 && (z[1] - 10.5).abs() < 1e-12);
    }

    #[test]
    fn corners_symmetric_under_half_turn() {
        let dims = Dims { h: 1.5, w: 1.7, l: 4.1 };
        let a = box3d_corners(&label(dims, Vec3::new(1.0, 1.6, 20.0), 0.0));
        let b = box3d_corners(&label(dims, Vec3::new(1.0, 1.6, 20.0), PI));
        for p in &a {
            assert!(b.iter().any(|q| (p - q).norm() < 1e-12));
        }
        let centroid: Vec3 = a.iter().sum::<Vec3>() / 8.0;
        assert!((centroid - Vec3::new(1.0, 1.6 - 0.75, 20.0)).norm() < 1e-9);
    }

    #[test]
    fn projection_cases() {
        let rig = CameraRig::pinhole(100.0, 50.0, 50.0, 100, 100);
        let tiny = Dims { h: 1e-9, w: 1e-9, l: 1e-9 };
        let b = project_box(&box3d_corners(&label(tiny, Vec3::new(0.0, 0.0, 10.0), 0.0)), &rig)
            .unwrap();
        assert!(b.left <= 50.0 && b.right >= 50.0 && b.top <= 50.0 && b.bottom >= 50.0);
        assert!(b.width() < 1e-6 && b.height() < 1e-6);

        let wide = Dims { h: 1.0, w: 1.0, l: 1.0 };
        let b = project_box(&box3d_corners(&label(wide, Vec3::new(-5.5, 0.5, 10.0), 0.0)), &rig)
            .unwrap();
        assert_eq!(b.left, 0.0);

        let mut corners = box3d_corners(&label(wide, Vec3::new(0.0, 0.5, 10.0), 0.0));
        corners[3].z = 0.0;
        assert!(matches!(project_box(&corners, &rig), Err(GeometryError::BehindCamera { .. })));
    }

    #[test]
    fn iou2d_cases() {
        let a = BBox2D::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou2d(&a, &a), 1.0);
        assert_eq!(iou2d(&a, &BBox2D::new(20.0, 20.0, 30.0, 30.0)), 0.0);
        let b = BBox2D::new(5.0, 0.0, 15.0, 10.0);
        assert!((iou2d(&a, &b) - 50.0 / 150.0).abs() < 1e-12);
        let z = BBox2D::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou2d(&z, &z), 0.0);
    }

    #[test]
    fn kitti_unknown_alpha_is_derived() {
        let mut l = label(Dims { h: 1.5, w: 1.6, l: 4.0 }, Vec3::new(5.0, 1.6, 5.0), 1.0);
        l.alpha = -10.0;
        assert!((l.observation_angle() - (1.0 - FRAC_PI_4)).abs() < 1e-12);
    }
}
