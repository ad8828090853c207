//! Coordinate conventions and the exact geometric primitives used by every
//! other module.
//!
//! Camera frame: +Z along the optical axis, +X right, +Y down (pinhole).
//! Pixel `(i, j)` covers `[i, i+1) x [j, j+1)` so its center sits at
//! `(i + 0.5, j + 0.5)`. World frame: right-handed and z-up, consistent per
//! trajectory. Quaternions are stored `(w, x, y, z)` and rotate camera-frame
//! vectors into the world frame.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `|q| - 1` accepted when loading or transforming.
pub const QUATERNION_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("depth must be positive and finite, got {0}")]
    NonPositiveDepth(f64),
    #[error("pixel ({u}, {v}) lies outside the {width}x{height} image")]
    PixelOutOfBounds { u: f64, v: f64, width: u32, height: u32 },
    #[error("quaternion norm {0} deviates from 1 by more than {QUATERNION_TOLERANCE}")]
    UnnormalizedQuaternion(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid bounding box: {0}")]
    InvalidBBox(String),
    #[error("invalid 3-D box: min {min:?} exceeds max {max:?}")]
    InvalidAabb { min: [f64; 3], max: [f64; 3] },
    #[error("non-finite coordinate")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Pinhole camera intrinsics, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let intr = Self { fx, fy, cx, cy, width, height };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        let w = f64::from(self.width);
        let h = f64::from(self.height);
        if !(self.cx >= 0.0 && self.cx < w && self.cy >= 0.0 && self.cy < h) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Projects a camera-frame point to continuous pixel coordinates.
    /// Returns `None` for points at or behind the image plane.
    pub fn project(&self, p: &CameraPoint) -> Option<(f64, f64)> {
        let v = p.0;
        if v.z <= 0.0 {
            return None;
        }
        Some((self.fx * v.x / v.z + self.cx, self.fy * v.y / v.z + self.cy))
    }
}

/// A point in the camera frame, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPoint(pub Vector3<f64>);

/// A point in the world frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct WorldPoint(pub Vector3<f64>);

impl CameraPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vector3::new(x, y, z))
    }
}

impl WorldPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vector3::new(x, y, z))
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn distance(&self, other: &WorldPoint) -> f64 {
        (self.0 - other.0).norm()
    }
}

impl From<[f64; 3]> for WorldPoint {
    fn from(a: [f64; 3]) -> Self {
        Self(Vector3::from(a))
    }
}

impl From<WorldPoint> for [f64; 3] {
    fn from(p: WorldPoint) -> Self {
        p.0.into()
    }
}

/// Camera pose for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub frame_id: u64,
    pub timestamp: f64,
    pub position: Vector3<f64>,
    /// Camera-to-world rotation. Renormalized on construction unless already
    /// unit to within rounding.
    pub orientation: Quaternion<f64>,
}

impl Pose {
    /// Builds a pose from a `(w, x, y, z)` quaternion, rejecting quaternions
    /// whose norm is off by more than [`QUATERNION_TOLERANCE`] and
    /// renormalizing the rest.
    pub fn new(frame_id: u64, timestamp: f64, position: [f64; 3], wxyz: [f64; 4]) -> Result<Self> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let unit = checked_unit(&q)?;
        let position = Vector3::from(position);
        if !position.iter().all(|c| c.is_finite()) || !timestamp.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { frame_id, timestamp, position, orientation: *unit.quaternion() })
    }

    /// Pose from a camera-to-world rotation.
    pub fn from_rotation(frame_id: u64, timestamp: f64, position: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self { frame_id, timestamp, position, orientation: *rotation.quaternion() }
    }

    /// Quaternion as `(w, x, y, z)`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = &self.orientation;
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation(&self) -> Result<UnitQuaternion<f64>> {
        checked_unit(&self.orientation)
    }
}

fn checked_unit(q: &Quaternion<f64>) -> Result<UnitQuaternion<f64>> {
    let norm = q.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > QUATERNION_TOLERANCE {
        return Err(GeometryError::UnnormalizedQuaternion(norm));
    }
    // Already unit up to rounding: keep the exact components so a saved
    // pose loads back bit for bit.
    if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
        return Ok(UnitQuaternion::new_unchecked(*q));
    }
    Ok(UnitQuaternion::from_quaternion(*q))
}

/// Axis-aligned detector box in pixels, half-open `[min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct PixelBBox {
    pub xmin: u32,
    pub ymin: u32,
    pub xmax: u32,
    pub ymax: u32,
}

impl PixelBBox {
    pub fn new(xmin: u32, ymin: u32, xmax: u32, ymax: u32) -> Result<Self> {
        if xmin >= xmax || ymin >= ymax {
            return Err(GeometryError::InvalidBBox(format!("[{xmin}, {ymin}, {xmax}, {ymax}] has non-positive area")));
        }
        Ok(Self { xmin, ymin, xmax, ymax })
    }

    pub fn check_within(&self, intr: &Intrinsics) -> Result<()> {
        if self.xmax > intr.width || self.ymax > intr.height {
            return Err(GeometryError::InvalidBBox(format!(
                "[{}, {}, {}, {}] exceeds {}x{} image",
                self.xmin, self.ymin, self.xmax, self.ymax, intr.width, intr.height
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> u32 {
        self.ymax - self.ymin
    }

    /// Area in px².
    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    /// Geometric center in continuous pixel coordinates.
    pub fn center(&self) -> (f64, f64) {
        ((f64::from(self.xmin) + f64::from(self.xmax)) / 2.0, (f64::from(self.ymin) + f64::from(self.ymax)) / 2.0)
    }
}

impl TryFrom<[u32; 4]> for PixelBBox {
    type Error = GeometryError;

    fn try_from(a: [u32; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl From<PixelBBox> for [u32; 4] {
    fn from(b: PixelBBox) -> Self {
        [b.xmin, b.ymin, b.xmax, b.ymax]
    }
}

/// Axis-aligned 3-D box in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AabbRepr", into = "AabbRepr")]
pub struct Aabb3 {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct AabbRepr {
    min: [f64; 3],
    max: [f64; 3],
}

impl TryFrom<AabbRepr> for Aabb3 {
    type Error = GeometryError;

    fn try_from(r: AabbRepr) -> Result<Self> {
        Self::new(r.min, r.max)
    }
}

impl From<Aabb3> for AabbRepr {
    fn from(b: Aabb3) -> Self {
        Self { min: b.min.into(), max: b.max.into() }
    }
}

impl Aabb3 {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        if min.iter().chain(max.iter()).any(|c| !c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if (0..3).any(|i| min[i] > max[i]) {
            return Err(GeometryError::InvalidAabb { min, max });
        }
        Ok(Self { min: Vector3::from(min), max: Vector3::from(max) })
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) / 2.0
    }

    pub fn contains(&self, p: &WorldPoint) -> bool {
        (0..3).all(|i| self.min[i] <= p.0[i] && p.0[i] <= self.max[i])
    }

    /// The box grown by `margin` on every side.
    pub fn inflated(&self, margin: f64) -> Self {
        let m = Vector3::repeat(margin);
        Self { min: self.min - m, max: self.max + m }
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let (a, b) = (self.min, self.max);
        [
            Vector3::new(a.x, a.y, a.z),
            Vector3::new(b.x, a.y, a.z),
            Vector3::new(a.x, b.y, a.z),
            Vector3::new(b.x, b.y, a.z),
            Vector3::new(a.x, a.y, b.z),
            Vector3::new(b.x, a.y, b.z),
            Vector3::new(a.x, b.y, b.z),
            Vector3::new(b.x, b.y, b.z),
        ]
    }

    /// Slab test. Returns the entry parameter `t >= 0` of the ray
    /// `origin + t * dir`, or `None` if the ray misses. A ray starting
    /// inside the box reports `t = 0`.
    pub fn ray_entry(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let mut t_near = 0.0_f64;
        let mut t_far = f64::INFINITY;
        for i in 0..3 {
            if dir[i] == 0.0 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let mut t0 = (self.min[i] - origin[i]) * inv;
            let mut t1 = (self.max[i] - origin[i]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_near = t_near.max(t0);
            t_far = t_far.min(t1);
            if t_near > t_far {
                return None;
            }
        }
        Some(t_near)
    }
}

/// Back-projects pixel `(u, v)` with depth `z` into the camera frame.
pub fn backproject(u: f64, v: f64, z: f64, intr: &Intrinsics) -> Result<CameraPoint> {
    if !z.is_finite() || z <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(z));
    }
    if !(u >= 0.0 && u < f64::from(intr.width) && v >= 0.0 && v < f64::from(intr.height)) {
        return Err(GeometryError::PixelOutOfBounds { u, v, width: intr.width, height: intr.height });
    }
    Ok(CameraPoint::new((u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z))
}

/// `R(q) * p + position`.
pub fn camera_to_world(p: &CameraPoint, pose: &Pose) -> Result<WorldPoint> {
    let r = pose.rotation()?;
    Ok(WorldPoint(r * p.0 + pose.position))
}

/// Inverse of [`camera_to_world`].
pub fn world_to_camera(p: &WorldPoint, pose: &Pose) -> Result<CameraPoint> {
    let r = pose.rotation()?;
    Ok(CameraPoint(r.inverse() * (p.0 - pose.position)))
}

/// Euclidean distance from `p` to the closest point of `b`; zero inside.
pub fn point_to_aabb_distance(p: &WorldPoint, b: &Aabb3) -> f64 {
    let mut sq = 0.0;
    for i in 0..3 {
        let d = (b.min[i] - p.0[i]).max(0.0).max(p.0[i] - b.max[i]);
        sq += d * d;
    }
    sq.sqrt()
}

/// Angle between the optical axis and the ray through the box center.
pub fn bbox_view_angle(b: &PixelBBox, intr: &Intrinsics) -> f64 {
    let (uc, vc) = b.center();
    let tx = (uc - intr.cx) / intr.fx;
    let ty = (vc - intr.cy) / intr.fy;
    (tx * tx + ty * ty).sqrt().atan()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn intr() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 50.0, 50.0, 200, 100).unwrap()
    }

    fn unit_box() -> Aabb3 {
        Aabb3::new([0.0; 3], [1.0; 3]).unwrap()
    }

    #[test]
    fn backproject_examples() {
        let p = backproject(50.0, 50.0, 2.0, &intr()).unwrap();
        assert_eq!(p.0, Vector3::new(0.0, 0.0, 2.0));
        let p = backproject(150.0, 50.0, 2.0, &intr()).unwrap();
        assert_eq!(p.0, Vector3::new(2.0, 0.0, 2.0));
        assert_eq!(backproject(50.0, 50.0, 0.0, &intr()), Err(GeometryError::NonPositiveDepth(0.0)));
        assert!(backproject(50.0, 50.0, f64::NAN, &intr()).is_err());
        assert!(matches!(backproject(200.0, 50.0, 1.0, &intr()), Err(GeometryError::PixelOutOfBounds { .. })));
    }

    #[test]
    fn camera_to_world_examples() {
        let pose = Pose::new(0, 0.0, [1.0, 1.0, 1.0], [1.0, 0.0, 0.0, 0.0]).unwrap();
        let w = camera_to_world(&CameraPoint::new(0.0, 0.0, 2.0), &pose).unwrap();
        assert_eq!(w.0, Vector3::new(1.0, 1.0, 3.0));

        // 180 degrees about +Y: (w, x, y, z) = (0, 0, 1, 0)
        let pose = Pose::new(0, 0.0, [0.0; 3], [0.0, 0.0, 1.0, 0.0]).unwrap();
        let w = camera_to_world(&CameraPoint::new(0.0, 0.0, 2.0), &pose).unwrap();
        assert_abs_diff_eq!(w.0, Vector3::new(0.0, 0.0, -2.0), epsilon = 1e-15);
    }

    #[test]
    fn quaternion_tolerance() {
        let p = Pose::new(0, 0.0, [0.0; 3], [1.0005, 0.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(p.orientation.norm(), 1.0, epsilon = 1e-12);
        assert!(matches!(
            Pose::new(0, 0.0, [0.0; 3], [1.01, 0.0, 0.0, 0.0]),
            Err(GeometryError::UnnormalizedQuaternion(_))
        ));
        let mut bad = Pose::new(0, 0.0, [0.0; 3], [1.0, 0.0, 0.0, 0.0]).unwrap();
        bad.orientation = Quaternion::new(2.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            camera_to_world(&CameraPoint::new(0.0, 0.0, 1.0), &bad),
            Err(GeometryError::UnnormalizedQuaternion(_))
        ));
    }

    #[test]
    fn aabb_distance_examples() {
        let b = unit_box();
        assert_eq!(point_to_aabb_distance(&WorldPoint::new(0.5, 0.5, 0.5), &b), 0.0);
        assert_eq!(point_to_aabb_distance(&WorldPoint::new(3.0, 0.5, 0.5), &b), 2.0);
        assert_eq!(point_to_aabb_distance(&WorldPoint::new(2.0, 2.0, 2.0), &b), 3f64.sqrt());
        assert_eq!(point_to_aabb_distance(&WorldPoint::new(1.0, 0.2, 0.0), &b), 0.0);
    }

    #[test]
    fn view_angle_examples() {
        let i = intr();
        let on_axis = PixelBBox::new(40, 40, 60, 60).unwrap();
        assert_eq!(bbox_view_angle(&on_axis, &i), 0.0);
        // center at (cx + fx, cy) = (150, 50)
        let off = PixelBBox::new(140, 40, 160, 60).unwrap();
        assert_abs_diff_eq!(bbox_view_angle(&off, &i), FRAC_PI_4, epsilon = 1e-15);
    }

    #[test]
    fn bbox_and_aabb_validation() {
        assert!(PixelBBox::new(5, 5, 5, 9).is_err());
        assert!(PixelBBox::new(0, 0, 201, 10).unwrap().check_within(&intr()).is_err());
        assert_eq!(PixelBBox::new(0, 0, 20, 30).unwrap().area(), 600);
        assert!(Aabb3::new([0.0, 2.0, 0.0], [1.0, 1.0, 1.0]).is_err());
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0, 10, 10).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 10.0, 0.0, 10, 10).is_err());
        let json = serde_json::to_string(&PixelBBox::new(1, 2, 3, 4).unwrap()).unwrap();
        assert_eq!(json, "[1,2,3,4]");
        assert!(serde_json::from_str::<PixelBBox>("[3,2,1,4]").is_err());
    }

    #[test]
    fn ray_entry_hits_front_face() {
        let b = Aabb3::new([-0.5, -0.5, 2.0], [0.5, 0.5, 3.0]).unwrap();
        let t = b.ray_entry(&Vector3::zeros(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(t, 2.0);
        assert!(b.ray_entry(&Vector3::zeros(), &Vector3::new(0.0, 0.0, -1.0)).is_none());
        assert!(b.ray_entry(&Vector3::zeros(), &Vector3::new(1.0, 0.0, 0.1)).is_none());
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (prop::array::uniform3(-10.0..10.0f64), prop::array::uniform4(-1.0..1.0f64))
            .prop_filter("non-degenerate quaternion", |(_, q)| q.iter().map(|c| c * c).sum::<f64>() > 1e-3)
            .prop_map(|(t, q)| {
                let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
                Pose::new(0, 0.0, t, [q[0] / n, q[1] / n, q[2] / n, q[3] / n]).unwrap()
            })
    }

    proptest! {
        #[test]
        fn transform_round_trip(pose in arb_pose(), p in prop::array::uniform3(-20.0..20.0f64)) {
            let c = CameraPoint(Vector3::from(p));
            let back = world_to_camera(&camera_to_world(&c, &pose).unwrap(), &pose).unwrap();
            prop_assert!((back.0 - c.0).norm() < 1e-9);
        }

        #[test]
        fn transform_is_isometry(pose in arb_pose(), p in prop::array::uniform3(-20.0..20.0f64), q in prop::array::uniform3(-20.0..20.0f64)) {
            let (a, b) = (CameraPoint(Vector3::from(p)), CameraPoint(Vector3::from(q)));
            let d = camera_to_world(&a, &pose).unwrap().distance(&camera_to_world(&b, &pose).unwrap());
            prop_assert!((d - (a.0 - b.0).norm()).abs() < 1e-9);
        }

        #[test]
        fn backproject_homogeneous(u in 0.0..200.0f64, v in 0.0..100.0f64, z in 0.01..50.0f64, alpha in 0.01..20.0f64) {
            let a = backproject(u, v, alpha * z, &intr()).unwrap();
            let b = backproject(u, v, z, &intr()).unwrap();
            prop_assert!((a.0 - b.0 * alpha).norm() <= 1e-12 * (1.0 + a.0.norm()));
        }

        #[test]
        fn backproject_then_project(u in 0.0..200.0f64, v in 0.0..100.0f64, z in 0.01..50.0f64) {
            let (pu, pv) = intr().project(&backproject(u, v, z, &intr()).unwrap()).unwrap();
            prop_assert!((pu - u).abs() < 1e-9 && (pv - v).abs() < 1e-9);
        }

        #[test]
        fn distance_zero_iff_inside(p in prop::array::uniform3(-2.0..3.0f64)) {
            let wp = WorldPoint(Vector3::from(p));
            let b = unit_box();
            prop_assert_eq!(point_to_aabb_distance(&wp, &b) == 0.0, b.contains(&wp));
        }

        #[test]
        fn distance_is_lipschitz(p in prop::array::uniform3(-5.0..5.0f64), q in prop::array::uniform3(-5.0..5.0f64)) {
            let (a, b) = (WorldPoint(Vector3::from(p)), WorldPoint(Vector3::from(q)));
            let bx = unit_box();
            let diff = (point_to_aabb_distance(&a, &bx) - point_to_aabb_distance(&b, &bx)).abs();
            prop_assert!(diff <= a.distance(&b) + 1e-12);
        }

        #[test]
        fn view_angle_matches_ray_dot_product(x0 in 0u32..190, y0 in 0u32..90, w in 1u32..10, h in 1u32..10) {
            let i = intr();
            let b = PixelBBox::new(x0, y0, x0 + w, y0 + h).unwrap();
            let (uc, vc) = b.center();
            let ray = Vector3::new((uc - i.cx) / i.fx, (vc - i.cy) / i.fy, 1.0).normalize();
            let oracle = ray.cross(&Vector3::z()).norm().atan2(ray.dot(&Vector3::z()));
            prop_assert!((bbox_view_angle(&b, &i) - oracle).abs() < 1e-9);
            prop_assert!(bbox_view_angle(&b, &i) < PI / 2.0);
        }
    }
}
