//! Rigid-body math for the tabletop: poses, 6D rotation encodings, point
//! clouds and planar footprints.
//!
//! Quaternions follow the (w, x, y, z) Hamilton convention throughout.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Point2, Quaternion, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate 6D rotation encoding: columns are (near) parallel or zero")]
    DegenerateRot6D,
    #[error("quaternion has zero norm")]
    ZeroQuaternion,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// A rigid transform: rotation followed by translation.
#[derive(Clone, Copy, PartialEq)]
pub struct Pose {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.rotation.quaternion();
        write!(
            f,
            "Pose(t=[{:.6}, {:.6}, {:.6}], q=[{:.6}, {:.6}, {:.6}, {:.6}])",
            self.translation.x, self.translation.y, self.translation.z, q.w, q.i, q.j, q.k
        )
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    /// A pose on the table plane at height zero with the given heading.
    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        Self::new(
            Vector3::new(x, y, 0.0),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        )
    }

    /// Builds a pose from `[w, x, y, z]`, normalizing the quaternion.
    pub fn from_wxyz(translation: Vector3<f64>, wxyz: [f64; 4]) -> Result<Self, GeometryError> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        if q.norm() < 1e-12 {
            return Err(GeometryError::ZeroQuaternion);
        }
        Ok(Self::new(translation, UnitQuaternion::from_quaternion(q)))
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            translation: self.translation + self.rotation * other.translation,
            rotation: self.rotation * other.rotation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            translation: -(inv * self.translation),
            rotation: inv,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Heading about the world z axis.
    pub fn yaw(&self) -> f64 {
        let q = self.rotation.quaternion();
        (2.0 * (q.w * q.k + q.i * q.j)).atan2(1.0 - 2.0 * (q.j * q.j + q.k * q.k))
    }

    pub fn xy(&self) -> Vector2<f64> {
        Vector2::new(self.translation.x, self.translation.y)
    }

    pub fn xy_point(&self) -> Point2<f64> {
        Point2::new(self.translation.x, self.translation.y)
    }

    /// Planar summary `[x, y, yaw]`.
    pub fn xyyaw(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.yaw()]
    }

    pub fn to_array(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        [
            self.translation.x,
            self.translation.y,
            self.translation.z,
            q.w,
            q.i,
            q.j,
            q.k,
        ]
    }

    pub fn from_array(a: [f64; 7]) -> Result<Self, GeometryError> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("pose"));
        }
        Self::from_wxyz(Vector3::new(a[0], a[1], a[2]), [a[3], a[4], a[5], a[6]])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Translation distance plus a weighted geodesic rotation distance.
    pub fn distance(&self, other: &Pose, rot_weight: f64) -> f64 {
        (self.translation - other.translation).norm()
            + rot_weight * self.rotation.angle_to(&other.rotation)
    }

    pub fn approx_eq(&self, other: &Pose, tol: f64) -> bool {
        (self.translation - other.translation).norm() <= tol
            && self.rotation.angle_to(&other.rotation) <= tol
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a Pose> for &'a Pose {
    type Output = Pose;
    fn mul(self, rhs: &'a Pose) -> Pose {
        self.compose(rhs)
    }
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let a = <[f64; 7]>::deserialize(d)?;
        Pose::from_array(a).map_err(D::Error::custom)
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

/// Continuous rotation encoding: the first two columns of the rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rot6D(pub [f64; 6]);

impl Rot6D {
    pub fn encode(r: &UnitQuaternion<f64>) -> Rot6D {
        let m = r.to_rotation_matrix();
        let m = m.matrix();
        Rot6D([
            m[(0, 0)],
            m[(1, 0)],
            m[(2, 0)],
            m[(0, 1)],
            m[(1, 1)],
            m[(2, 1)],
        ])
    }

    /// Gram-Schmidt the two columns back onto SO(3).
    pub fn decode(&self) -> Result<UnitQuaternion<f64>, GeometryError> {
        let v = &self.0;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite("rot6d"));
        }
        let a1 = Vector3::new(v[0], v[1], v[2]);
        let a2 = Vector3::new(v[3], v[4], v[5]);
        let n1 = a1.norm();
        if n1 < 1e-9 {
            return Err(GeometryError::DegenerateRot6D);
        }
        let b1 = a1 / n1;
        let u2 = a2 - b1 * b1.dot(&a2);
        let n2 = u2.norm();
        if n2 < 1e-6 * a2.norm().max(1e-300) || n2 < 1e-9 {
            return Err(GeometryError::DegenerateRot6D);
        }
        let b2 = u2 / n2;
        let b3 = b1.cross(&b2);
        let m = Matrix3::from_columns(&[b1, b2, b3]);
        Ok(UnitQuaternion::from_rotation_matrix(
            &Rotation3::from_matrix_unchecked(m),
        ))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn rot6d_encode(r: &UnitQuaternion<f64>) -> Rot6D {
    Rot6D::encode(r)
}

pub fn rot6d_decode(v: &Rot6D) -> Result<UnitQuaternion<f64>, GeometryError> {
    v.decode()
}

/// A set of 3D points in a named frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub frame: String,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, frame: impl Into<String>) -> Self {
        Self {
            points,
            frame: frame.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Result<Vector3<f64>, GeometryError> {
        if self.points.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        let sum = self
            .points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p);
        Ok(sum / self.points.len() as f64)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.points.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        if self.points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(GeometryError::NonFinite("point cloud"));
        }
        Ok(())
    }

    pub fn transformed(&self, t: &Pose) -> PointCloud {
        transform_cloud(t, self)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    pub fn from_flat(flat: &[f64], frame: impl Into<String>) -> Option<Self> {
        if flat.len() % 3 != 0 {
            return None;
        }
        let points = flat
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect();
        Some(Self::new(points, frame))
    }
}

#[derive(Serialize, Deserialize)]
struct FlatCloud {
    frame: String,
    points: Vec<f64>,
}

impl Serialize for PointCloud {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        FlatCloud {
            frame: self.frame.clone(),
            points: self.to_flat(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PointCloud {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let flat = FlatCloud::deserialize(d)?;
        PointCloud::from_flat(&flat.points, flat.frame)
            .ok_or_else(|| D::Error::custom("point array length is not a multiple of 3"))
    }
}

pub fn transform_cloud(t: &Pose, c: &PointCloud) -> PointCloud {
    PointCloud {
        points: c.points.iter().map(|p| t.transform_point(p)).collect(),
        frame: c.frame.clone(),
    }
}

/// Planar object outline, expressed in the object's own frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Footprint {
    Disk { radius: f64 },
    Rect { half_x: f64, half_y: f64 },
}

impl Footprint {
    /// Radius of the smallest disk centered at the origin covering the shape.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Footprint::Disk { radius } => radius,
            Footprint::Rect { half_x, half_y } => half_x.hypot(half_y),
        }
    }

    pub fn aspect_ratio(&self) -> f64 {
        match *self {
            Footprint::Disk { .. } => 1.0,
            Footprint::Rect { half_x, half_y } => half_x.max(half_y) / half_x.min(half_y),
        }
    }

    /// Rotations about the object origin mapping the footprint onto itself.
    pub fn symmetry_angles(&self) -> Vec<f64> {
        match *self {
            Footprint::Disk { .. } => vec![0.0],
            Footprint::Rect { half_x, half_y } if (half_x - half_y).abs() < 1e-12 => {
                vec![0.0, 0.5 * PI, PI, -0.5 * PI]
            }
            Footprint::Rect { .. } => vec![0.0, PI],
        }
    }

    /// Signed distance from a point in the object frame to the outline
    /// (negative inside).
    pub fn signed_distance_local(&self, p: Vector2<f64>) -> f64 {
        match *self {
            Footprint::Disk { radius } => p.norm() - radius,
            Footprint::Rect { half_x, half_y } => {
                let dx = p.x.abs() - half_x;
                let dy = p.y.abs() - half_y;
                let outside = Vector2::new(dx.max(0.0), dy.max(0.0)).norm();
                let inside = dx.max(dy).min(0.0);
                outside + inside
            }
        }
    }

    /// Distance from a world point to the footprint placed at `pose`; zero inside.
    pub fn distance_to_point(&self, pose: &Pose, p: Vector2<f64>) -> f64 {
        let local = to_local(pose, p);
        self.signed_distance_local(local).max(0.0)
    }

    pub fn contains_point(&self, pose: &Pose, p: Vector2<f64>, tol: f64) -> bool {
        self.signed_distance_local(to_local(pose, p)) <= tol
    }

    /// Polygon approximation in world coordinates (rectangles are exact).
    pub fn polygon(&self, pose: &Pose, disk_segments: usize) -> Vec<Vector2<f64>> {
        let local: Vec<Vector2<f64>> = match *self {
            Footprint::Disk { radius } => (0..disk_segments)
                .map(|i| {
                    let a = 2.0 * PI * i as f64 / disk_segments as f64;
                    Vector2::new(radius * a.cos(), radius * a.sin())
                })
                .collect(),
            Footprint::Rect { half_x, half_y } => vec![
                Vector2::new(-half_x, -half_y),
                Vector2::new(half_x, -half_y),
                Vector2::new(half_x, half_y),
                Vector2::new(-half_x, half_y),
            ],
        };
        local.into_iter().map(|p| to_world(pose, p)).collect()
    }

    /// Minimum distance between two placed footprints; zero when they overlap.
    pub fn distance_to(&self, pose: &Pose, other: &Footprint, other_pose: &Pose) -> f64 {
        match (*self, *other) {
            (Footprint::Disk { radius: r1 }, Footprint::Disk { radius: r2 }) => {
                ((pose.xy() - other_pose.xy()).norm() - r1 - r2).max(0.0)
            }
            (Footprint::Disk { radius }, rect @ Footprint::Rect { .. }) => {
                (rect.distance_to_point(other_pose, pose.xy()) - radius).max(0.0)
            }
            (rect @ Footprint::Rect { .. }, Footprint::Disk { radius }) => {
                (rect.distance_to_point(pose, other_pose.xy()) - radius).max(0.0)
            }
            (Footprint::Rect { .. }, Footprint::Rect { .. }) => {
                let a = self.polygon(pose, 0);
                let b = other.polygon(other_pose, 0);
                convex_polygon_distance(&a, &b)
            }
        }
    }

    /// Whether this footprint at `pose` lies inside `region` at `region_pose`.
    pub fn inside(&self, pose: &Pose, region: &Footprint, region_pose: &Pose, tol: f64) -> bool {
        match *self {
            Footprint::Disk { radius } => {
                region.signed_distance_local(to_local(region_pose, pose.xy())) <= -radius + tol
            }
            Footprint::Rect { .. } => self
                .polygon(pose, 0)
                .into_iter()
                .all(|v| region.signed_distance_local(to_local(region_pose, v)) <= tol),
        }
    }
}

fn to_local(pose: &Pose, p: Vector2<f64>) -> Vector2<f64> {
    let d = p - pose.xy();
    let (s, c) = pose.yaw().sin_cos();
    Vector2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
}

fn to_world(pose: &Pose, p: Vector2<f64>) -> Vector2<f64> {
    let (s, c) = pose.yaw().sin_cos();
    Vector2::new(c * p.x - s * p.y, s * p.x + c * p.y) + pose.xy()
}

/// Distance from `p` to segment `[a, b]`.
pub fn point_segment_distance(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 <= f64::EPSILON {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn segments_intersect(a: Vector2<f64>, b: Vector2<f64>, c: Vector2<f64>, d: Vector2<f64>) -> bool {
    let cross = |o: Vector2<f64>, p: Vector2<f64>, q: Vector2<f64>| {
        (p.x - o.x) * (q.y - o.y) - (p.y - o.y) * (q.x - o.x)
    };
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

fn point_in_convex(p: Vector2<f64>, poly: &[Vector2<f64>]) -> bool {
    let n = poly.len();
    let mut sign = 0.0f64;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        if c.abs() < 1e-15 {
            continue;
        }
        if sign == 0.0 {
            sign = c.signum();
        } else if c.signum() != sign {
            return false;
        }
    }
    true
}

/// Distance between two convex polygons, zero if they intersect.
pub fn convex_polygon_distance(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> f64 {
    if a.iter().any(|p| point_in_convex(*p, b)) || b.iter().any(|p| point_in_convex(*p, a)) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for i in 0..a.len() {
        let (a0, a1) = (a[i], a[(i + 1) % a.len()]);
        for j in 0..b.len() {
            let (b0, b1) = (b[j], b[(j + 1) % b.len()]);
            if segments_intersect(a0, a1, b0, b1) {
                return 0.0;
            }
            best = best
                .min(point_segment_distance(a0, b0, b1))
                .min(point_segment_distance(b0, a0, a1));
        }
    }
    best
}
