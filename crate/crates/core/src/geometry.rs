//! Oriented boxes, bird's-eye-view overlap, rigid poses and trajectory hulls.
//!
//! Coordinates follow the KITTI camera convention: `x` points right, `y`
//! down and `z` forward. The bird's-eye view (BEV) is the `x`/`z` plane and
//! yaw `ry` is a rotation about `y`. A box with `ry = 0` has its length along
//! local `x`; its heading in BEV is `(cos ry, -sin ry)`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into `[-π, π)`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r >= PI {
        r -= 2.0 * PI;
    }
    if r < -PI {
        r = -PI;
    }
    r
}

/// Signed angular difference `a - b` wrapped into `[-π, π)`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    normalize_angle(a - b)
}

/// Oriented 3D box. `y` is the vertical center of the box (not the KITTI
/// bottom-face location).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Extent across the heading.
    pub w: f64,
    /// Extent along the heading.
    pub l: f64,
    pub h: f64,
    pub ry: f64,
}

impl Box3D {
    pub fn new(x: f64, y: f64, z: f64, w: f64, l: f64, h: f64, ry: f64) -> Result<Self> {
        let all = [x, y, z, w, l, h, ry];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "box fields must be finite: {all:?}"
            )));
        }
        if w <= 0.0 || l <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "box dimensions must be positive: w={w} l={l} h={h}"
            )));
        }
        Ok(Self {
            x,
            y,
            z,
            w,
            l,
            h,
            ry: normalize_angle(ry),
        })
    }

    pub fn bev(&self) -> RectBEV {
        RectBEV {
            x: self.x,
            z: self.z,
            w: self.w,
            l: self.l,
            ry: self.ry,
        }
    }

    pub fn volume(&self) -> f64 {
        self.w * self.l * self.h
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub(crate) fn with_center(mut self, c: Vector3<f64>) -> Self {
        self.x = c.x;
        self.y = c.y;
        self.z = c.z;
        self
    }
}

/// BEV footprint of a [`Box3D`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectBEV {
    pub x: f64,
    pub z: f64,
    pub w: f64,
    pub l: f64,
    pub ry: f64,
}

impl RectBEV {
    /// Corners as `(x, z)` pairs, counter-clockwise in the `x`/`z` plane.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = self.ry.sin_cos();
        let hl = self.l / 2.0;
        let hw = self.w / 2.0;
        let local = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
        let mut out = [(0.0, 0.0); 4];
        for (o, (lx, lz)) in out.iter_mut().zip(local) {
            *o = (self.x + c * lx + s * lz, self.z - s * lx + c * lz);
        }
        // Proper rotation: the local CCW order survives.
        debug_assert!(polygon_signed_area(&out) > 0.0);
        out
    }

    pub fn area(&self) -> f64 {
        self.w * self.l
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAlignedRectBEV {
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl AxisAlignedRectBEV {
    pub fn contains(&self, x: f64, z: f64) -> bool {
        x >= self.x_min && x <= self.x_max && z >= self.z_min && z <= self.z_max
    }
}

/// Crop region of the BEV map, closed on every side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevBounds {
    pub x_range: [f64; 2],
    pub z_range: [f64; 2],
    pub y_range: [f64; 2],
}

impl Default for BevBounds {
    fn default() -> Self {
        Self {
            x_range: [-40.0, 40.0],
            z_range: [0.0, 70.0],
            y_range: [0.0, 2.5],
        }
    }
}

impl BevBounds {
    pub fn new(x_range: [f64; 2], z_range: [f64; 2], y_range: [f64; 2]) -> Result<Self> {
        for (name, r) in [("x", x_range), ("z", z_range), ("y", y_range)] {
            // Written to reject NaN as well.
            if r[0].partial_cmp(&r[1]) != Some(std::cmp::Ordering::Less) {
                return Err(Error::InvalidArgument(format!(
                    "{name} range must satisfy min < max, got {r:?}"
                )));
            }
        }
        Ok(Self {
            x_range,
            z_range,
            y_range,
        })
    }
}

/// True iff the box center lies inside the BEV `x`/`z` ranges.
pub fn in_bounds(b: &Box3D, bounds: &BevBounds) -> bool {
    b.x >= bounds.x_range[0]
        && b.x <= bounds.x_range[1]
        && b.z >= bounds.z_range[0]
        && b.z <= bounds.z_range[1]
}

/// Rigid ego-to-world transform of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ORTHO_TOL: f64 = 1e-9;

/// Largest absolute entry of `R·Rᵀ - I`.
pub(crate) fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r * r.transpose() - Matrix3::identity()).amax()
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation
            .iter()
            .chain(translation.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument("pose entries must be finite".into()));
        }
        let err = orthonormality_error(&rotation);
        if err > ORTHO_TOL {
            return Err(Error::InvalidArgument(format!(
                "rotation is not orthonormal (max |RRᵀ-I| = {err:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidArgument(format!(
                "rotation determinant must be +1, got {det}"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Yaw rotation about the camera `y` axis followed by a translation.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: yaw_matrix(yaw),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Yaw component of the rotation, in `[-π, π)`.
    pub fn yaw(&self) -> f64 {
        normalize_angle(self.rotation[(0, 2)].atan2(self.rotation[(0, 0)]))
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Inverse of [`Pose::to_row_major`], with the same validation as [`Pose::new`].
    pub fn from_row_major(m: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Self::new(rotation, Vector3::new(m[3], m[7], m[11]))
    }

    /// Row-major `[R | t]` as twelve numbers.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }
}

/// Rotation by `yaw` about the camera `y` axis.
pub fn yaw_matrix(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// `target⁻¹ ∘ source`: maps coordinates of the source frame into the target frame.
pub fn relative_pose(source: &Pose, target: &Pose) -> Pose {
    target.inverse().compose(source)
}

/// Re-expresses a box through a rigid transform. The heading only picks up
/// the yaw part of the rotation.
pub fn transform_box(b: &Box3D, relative: &Pose) -> Box3D {
    let mut out = b.with_center(relative.apply(&b.center()));
    out.ry = normalize_angle(b.ry + relative.yaw());
    out
}

fn polygon_signed_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (x0, z0) = poly[i];
        let (x1, z1) = poly[(i + 1) % n];
        acc += x0 * z1 - x1 * z0;
    }
    acc / 2.0
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn line_intersection(p: (f64, f64), q: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    // Point on segment p→q that lies on the line a→b.
    let cp = cross(a, b, p);
    let cq = cross(a, b, q);
    let t = cp / (cp - cq);
    (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
}

/// Sutherland–Hodgman clipping of `subject` by the convex CCW polygon `clip`.
fn clip_polygon(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut output: Vec<(f64, f64)> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().unwrap();
        let mut prev_in = cross(a, b, prev) >= 0.0;
        for &cur in &input {
            let cur_in = cross(a, b, cur) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, a, b));
            }
            prev = cur;
            prev_in = cur_in;
        }
    }
    output
}

/// Area of the intersection of two oriented rectangles.
pub fn intersection_area_bev(a: &RectBEV, b: &RectBEV) -> f64 {
    let pa = a.corners();
    let pb = b.corners();
    let clipped = clip_polygon(&pa, &pb);
    if clipped.len() < 3 {
        return 0.0;
    }
    polygon_signed_area(&clipped).abs()
}

/// Intersection over union of two oriented BEV rectangles.
pub fn iou_bev(a: &RectBEV, b: &RectBEV) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = intersection_area_bev(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Intersection over union of two oriented boxes: BEV overlap area times
/// vertical overlap, over the union of volumes.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    if a == b {
        return 1.0;
    }
    let top = (a.y + a.h / 2.0).min(b.y + b.h / 2.0);
    let bottom = (a.y - a.h / 2.0).max(b.y - b.h / 2.0);
    let overlap_h = top - bottom;
    if overlap_h <= 0.0 {
        return 0.0;
    }
    let inter = intersection_area_bev(&a.bev(), &b.bev()) * overlap_h;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Smallest axis-aligned rectangle containing every corner of every footprint.
pub fn axis_aligned_union(footprints: &[RectBEV]) -> Result<AxisAlignedRectBEV> {
    if footprints.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let mut out = AxisAlignedRectBEV {
        x_min: f64::INFINITY,
        x_max: f64::NEG_INFINITY,
        z_min: f64::INFINITY,
        z_max: f64::NEG_INFINITY,
    };
    for (x, z) in footprints.iter().flat_map(|r| r.corners()) {
        out.x_min = out.x_min.min(x);
        out.x_max = out.x_max.max(x);
        out.z_min = out.z_min.min(z);
        out.z_max = out.z_max.max(z);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn square(x: f64, z: f64, side: f64, ry: f64) -> RectBEV {
        RectBEV {
            x,
            z,
            w: side,
            l: side,
            ry,
        }
    }

    fn cube(x: f64, y: f64, z: f64, side: f64) -> Box3D {
        Box3D::new(x, y, z, side, side, side, 0.0).unwrap()
    }

    #[test]
    fn normalize_angle_range() {
        assert_eq!(normalize_angle(PI), -PI);
        assert_eq!(normalize_angle(-PI), -PI);
        assert!((normalize_angle(3.0 * PI + 0.25) - (-PI + 0.25)).abs() < 1e-12);
        assert_eq!(normalize_angle(0.5), 0.5);
    }

    #[test]
    fn box_rejects_nonpositive_dims() {
        assert!(Box3D::new(0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0).is_err());
        assert!(Box3D::new(0.0, 0.0, 0.0, 1.0, -1.0, 1.0, 0.0).is_err());
        assert!(Box3D::new(0.0, f64::NAN, 0.0, 1.0, 1.0, 1.0, 0.0).is_err());
        let b = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 7.0).unwrap();
        assert!(b.ry >= -PI && b.ry < PI);
    }

    #[test]
    fn iou_bev_identity_and_disjoint() {
        let a = RectBEV {
            x: 1.0,
            z: 10.0,
            w: 1.6,
            l: 3.9,
            ry: 0.3,
        };
        assert_eq!(iou_bev(&a, &a), 1.0);
        let b = RectBEV { x: 20.0, ..a };
        assert_eq!(iou_bev(&a, &b), 0.0);
    }

    #[test]
    fn iou_bev_offset_squares() {
        // Oracle value 1/3 frozen from a 10^6-sample Monte-Carlo estimate
        // (see tests/geometry_oracles.rs).
        let a = square(0.0, 0.0, 2.0, 0.0);
        let b = square(1.0, 0.0, 2.0, 0.0);
        assert!((iou_bev(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_3d_cases() {
        let a = cube(0.0, 0.0, 0.0, 2.0);
        assert_eq!(iou_3d(&a, &a), 1.0);
        let stacked = Box3D { y: 5.0, ..a };
        assert_eq!(iou_3d(&a, &stacked), 0.0);
        let shifted = cube(1.0, 0.0, 0.0, 2.0);
        assert!((iou_3d(&a, &shifted) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_square_is_own_overlap() {
        let a = square(0.0, 0.0, 2.0, 0.7);
        let b = square(0.0, 0.0, 2.0, 0.7 + FRAC_PI_2);
        // Same square up to corner relabelling.
        assert!((iou_bev(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transform_identity_and_translation() {
        let b = Box3D::new(1.0, 0.5, 10.0, 1.6, 3.9, 1.5, 0.2).unwrap();
        assert_eq!(transform_box(&b, &Pose::identity()), b);
        let t = Pose::from_yaw(0.0, Vector3::new(1.0, 0.0, 0.0));
        let out = transform_box(&b, &t);
        assert_eq!(out.x, 2.0);
        assert_eq!(out.ry, b.ry);
    }

    #[test]
    fn transform_yaw_quarter_turn() {
        let b = Box3D::new(1.0, 0.0, 0.0, 1.0, 2.0, 1.0, 0.0).unwrap();
        let p = Pose::from_yaw(FRAC_PI_2, Vector3::zeros());
        let out = transform_box(&b, &p);
        // Oracle: homogeneous [R_y(π/2) | 0] applied to (1, 0, 0, 1).
        let hom = nalgebra::Matrix4::new(
            0.0, 0.0, 1.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            -1.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        let expected = hom * nalgebra::Vector4::new(1.0, 0.0, 0.0, 1.0);
        assert!((out.x - expected.x).abs() < 1e-12);
        assert!((out.y - expected.y).abs() < 1e-12);
        assert!((out.z - expected.z).abs() < 1e-12);
        assert!((out.ry - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn relative_pose_cases() {
        let p = Pose::from_yaw(0.4, Vector3::new(1.0, 2.0, 3.0));
        let r = relative_pose(&p, &p);
        assert!((r.rotation() - Matrix3::identity()).amax() < 1e-12);
        assert!(r.translation().amax() < 1e-12);

        let t = Vector3::new(3.0, -1.0, 2.0);
        let src = Pose::from_yaw(0.0, t);
        let r = relative_pose(&src, &Pose::identity());
        assert_eq!(*r.translation(), t);
    }

    #[test]
    fn pose_validation() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = 1.1;
        assert!(Pose::new(m, Vector3::zeros()).is_err());
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Pose::new(reflect, Vector3::zeros()).is_err());
        assert!(Pose::new(yaw_matrix(0.3), Vector3::zeros()).is_ok());
        assert!((Pose::from_yaw(-2.5, Vector3::zeros()).yaw() + 2.5).abs() < 1e-12);
    }

    #[test]
    fn union_cases() {
        let single = square(1.0, 2.0, 1.0, 0.0);
        let u = axis_aligned_union(&[single]).unwrap();
        assert_eq!((u.x_min, u.x_max, u.z_min, u.z_max), (0.5, 1.5, 1.5, 2.5));

        let u =
            axis_aligned_union(&[square(0.0, 0.0, 1.0, 0.0), square(3.0, 0.0, 1.0, 0.0)]).unwrap();
        assert_eq!((u.x_min, u.x_max, u.z_min, u.z_max), (-0.5, 3.5, -0.5, 0.5));

        let u = axis_aligned_union(&[square(0.0, 0.0, 1.0, PI / 4.0)]).unwrap();
        let h = 2f64.sqrt() / 2.0;
        for v in [-u.x_min, u.x_max, -u.z_min, u.z_max] {
            assert!((v - h).abs() < 1e-12);
        }

        assert!(matches!(
            axis_aligned_union(&[]),
            Err(Error::EmptyTrajectory)
        ));
    }

    #[test]
    fn bounds_are_closed() {
        let bounds = BevBounds::default();
        let mk = |x, z| Box3D::new(x, 1.0, z, 1.6, 3.9, 1.5, 0.0).unwrap();
        assert!(in_bounds(&mk(0.0, 35.0), &bounds));
        assert!(!in_bounds(&mk(41.0, 35.0), &bounds));
        assert!(in_bounds(&mk(40.0, 35.0), &bounds));
        assert!(in_bounds(&mk(-40.0, 0.0), &bounds));
        assert!(BevBounds::new([1.0, 1.0], [0.0, 1.0], [0.0, 1.0]).is_err());
    }
}
