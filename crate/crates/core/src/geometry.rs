//! Rigid ego poses, points, boxes, and the frame bookkeeping between them.
//!
//! Every [`Pose`] maps its source frame into a destination frame
//! (`x_dst = R * x_src + t`). A sweep's `ego_pose` maps ego coordinates
//! into world coordinates.

use std::f64::consts::PI;

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIT_NORM_TOL: f64 = 1e-9;

/// SE(3) rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    iso: Isometry3<f64>,
}

/// Wire form: quaternion as `[w, x, y, z]`, translation in meters.
#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [f64; 4],
    translation: [f64; 3],
}

impl TryFrom<PoseRepr> for Pose {
    type Error = Error;

    fn try_from(r: PoseRepr) -> Result<Self> {
        let [w, x, y, z] = r.rotation;
        Pose::from_quaternion([w, x, y, z], r.translation)
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let q = p.iso.rotation.quaternion();
        let t = p.iso.translation.vector;
        PoseRepr {
            rotation: [q.w, q.i, q.j, q.k],
            translation: [t.x, t.y, t.z],
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            iso: Isometry3::identity(),
        }
    }

    /// Builds a pose from a `[w, x, y, z]` quaternion that must already be unit norm.
    pub fn from_quaternion(wxyz: [f64; 4], translation: [f64; 3]) -> Result<Self> {
        if wxyz.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pose"));
        }
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        if (q.norm() - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidPose(format!(
                "quaternion norm {} is not 1",
                q.norm()
            )));
        }
        let rotation = UnitQuaternion::new_unchecked(q);
        Ok(Pose {
            iso: Isometry3::from_parts(Translation3::from(Vector3::from(translation)), rotation),
        })
    }

    /// Planar pose: rotation about +z by `yaw`, then translation.
    pub fn from_yaw(yaw: f64, translation: [f64; 3]) -> Self {
        let rotation = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
        Pose {
            iso: Isometry3::from_parts(Translation3::from(Vector3::from(translation)), rotation),
        }
    }

    pub fn translation(&self) -> [f64; 3] {
        let t = self.iso.translation.vector;
        [t.x, t.y, t.z]
    }

    pub fn quaternion(&self) -> [f64; 4] {
        let q = self.iso.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// Heading of the rotated +x axis projected on the ground plane.
    pub fn yaw(&self) -> f64 {
        let fwd = self.iso.rotation * Vector3::x();
        fwd.y.atan2(fwd.x)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            iso: self.iso * other.iso,
        }
    }

    pub fn inverse(&self) -> Pose {
        Pose {
            iso: self.iso.inverse(),
        }
    }

    /// Rotation angle of this pose, in [0, π].
    pub fn rotation_angle(&self) -> f64 {
        self.iso.rotation.angle()
    }

    pub fn apply(&self, p: &Point) -> Result<Point> {
        if !p.is_finite() {
            return Err(Error::NonFinite("point"));
        }
        let v = self.iso * nalgebra::Point3::new(p.x, p.y, p.z);
        Ok(Point {
            x: v.x,
            y: v.y,
            z: v.z,
            ..*p
        })
    }

    pub fn transform_position(&self, v: [f64; 3]) -> [f64; 3] {
        let out = self.iso * nalgebra::Point3::new(v[0], v[1], v[2]);
        [out.x, out.y, out.z]
    }

    pub fn rotate_vector(&self, v: [f64; 3]) -> [f64; 3] {
        let out = self.iso.rotation * Vector3::new(v[0], v[1], v[2]);
        [out.x, out.y, out.z]
    }

    /// Rotates a heading angle expressed in the source frame into the destination frame.
    pub fn rotate_yaw(&self, yaw: f64) -> f64 {
        let d = self.rotate_vector([yaw.cos(), yaw.sin(), 0.0]);
        normalize_yaw(d[1].atan2(d[0]))
    }
}

/// Wraps an angle into (−π, π].
pub fn normalize_yaw(yaw: f64) -> f64 {
    if yaw > -PI && yaw <= PI {
        return yaw;
    }
    let mut y = yaw.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

/// Smallest absolute difference between two headings, in [0, π].
pub fn yaw_difference(a: f64, b: f64) -> f64 {
    normalize_yaw(a - b).abs()
}

/// Applies a pose to a point.
pub fn apply_pose(pose: &Pose, p: &Point) -> Result<Point> {
    pose.apply(p)
}

pub fn invert_pose(pose: &Pose) -> Pose {
    pose.inverse()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<f32>,
    /// Seconds relative to the timestamp of the cloud this point lives in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point {
            x,
            y,
            z,
            intensity: None,
            dt: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Points in one declared frame, usually the ego frame of the latest sweep.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point> {
        self.points.iter()
    }
}

impl FromIterator<Point> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point>>(iter: I) -> Self {
        PointCloud {
            points: iter.into_iter().collect(),
        }
    }
}

/// One LiDAR sweep with points in its own ego frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub timestamp: f64,
    pub ego_pose: Pose,
    pub points: Vec<Point>,
}

/// Oriented cuboid with BEV velocity. Used for both detections and annotations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: [f64; 3],
    /// length, width, height
    pub dims: [f64; 3],
    pub yaw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<[f64; 2]>,
    pub class_id: u16,
    pub score: f64,
}

impl Box3D {
    pub fn validate(&self) -> Result<()> {
        let finite = self
            .center
            .iter()
            .chain(self.dims.iter())
            .chain(std::iter::once(&self.yaw))
            .chain(self.velocity.iter().flatten())
            .all(|v| v.is_finite());
        if !finite || !self.score.is_finite() {
            return Err(Error::NonFinite("box"));
        }
        if self.dims.iter().any(|&d| d <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "box dims must be positive, got {:?}",
                self.dims
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidArgument(format!(
                "box score {} outside [0, 1]",
                self.score
            )));
        }
        Ok(())
    }

    pub fn bev_center(&self) -> [f64; 2] {
        [self.center[0], self.center[1]]
    }

    pub fn bev_distance(&self, other: &Box3D) -> f64 {
        (self.center[0] - other.center[0]).hypot(self.center[1] - other.center[1])
    }

    /// BEV footprint containment test for a point (z ignored, boundary inclusive).
    pub fn contains_bev(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        let local_x = c * dx + s * dy;
        let local_y = -s * dx + c * dy;
        local_x.abs() <= 0.5 * self.dims[0] && local_y.abs() <= 0.5 * self.dims[1]
    }

    /// Axis-aligned BEV bounds `(min_x, min_y, max_x, max_y)` of the rotated footprint.
    pub fn bev_aabb(&self) -> (f64, f64, f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        let hx = 0.5 * (self.dims[0] * c.abs() + self.dims[1] * s.abs());
        let hy = 0.5 * (self.dims[0] * s.abs() + self.dims[1] * c.abs());
        (
            self.center[0] - hx,
            self.center[1] - hy,
            self.center[0] + hx,
            self.center[1] + hy,
        )
    }
}

/// Merges the last `k` sweeps into the ego frame of the most recent one.
///
/// Fewer than `k` sweeps is fine (stream warm-up); every available sweep is used.
/// Output points are ordered oldest sweep first and carry `dt = t_i - t_latest`.
pub fn aggregate_sweeps(sweeps: &[Sweep], k: usize) -> Result<PointCloud> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let latest = sweeps.last().ok_or(Error::EmptySweeps)?;
    if sweeps.windows(2).any(|w| w[1].timestamp <= w[0].timestamp) {
        return Err(Error::InvalidArgument(
            "sweep timestamps must strictly increase".into(),
        ));
    }
    let start = sweeps.len().saturating_sub(k);
    let window = &sweeps[start..];
    let world_to_latest = latest.ego_pose.inverse();

    let mut points = Vec::with_capacity(window.iter().map(|s| s.points.len()).sum());
    for sweep in window {
        let to_latest = world_to_latest.compose(&sweep.ego_pose);
        let dt = sweep.timestamp - latest.timestamp;
        for p in &sweep.points {
            let mut q = to_latest.apply(p)?;
            q.dt = Some(dt);
            points.push(q);
        }
    }
    Ok(PointCloud { points })
}

/// Re-expresses a box observed in the ego frame of `pose_src` in the ego frame of `pose_dst`.
pub fn compensate_box(b: &Box3D, pose_src: &Pose, pose_dst: &Pose) -> Result<Box3D> {
    let rel = pose_dst.inverse().compose(pose_src);
    if rel.translation().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidPose("non-finite relative pose".into()));
    }
    let velocity = b.velocity.map(|v| {
        let r = rel.rotate_vector([v[0], v[1], 0.0]);
        [r[0], r[1]]
    });
    Ok(Box3D {
        center: rel.transform_position(b.center),
        yaw: rel.rotate_yaw(b.yaw),
        velocity,
        ..*b
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let q = UnitQuaternion::from_scaled_axis(axis.normalize() * rng.gen_range(-PI..PI));
        let q = q.quaternion();
        Pose::from_quaternion(
            [q.w, q.i, q.j, q.k],
            [
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-5.0..5.0),
            ],
        )
        .unwrap()
    }

    fn close(a: &Point, b: &Point, tol: f64) -> bool {
        (a.x - b.x).abs() < tol && (a.y - b.y).abs() < tol && (a.z - b.z).abs() < tol
    }

    #[test]
    fn apply_identity_translation_rotation() {
        let p = Point::new(1.0, 2.0, 3.0);
        assert_eq!(Pose::identity().apply(&p).unwrap(), p);

        let t = Pose::from_yaw(0.0, [10.0, 0.0, 0.0]);
        let out = t.apply(&Point::new(0.0, 0.0, 0.0)).unwrap();
        assert_eq!((out.x, out.y, out.z), (10.0, 0.0, 0.0));

        let r = Pose::from_yaw(PI / 2.0, [0.0; 3]);
        let out = r.apply(&Point::new(1.0, 0.0, 0.0)).unwrap();
        assert!(close(&out, &Point::new(0.0, 1.0, 0.0), 1e-12));
    }

    #[test]
    fn apply_rejects_non_finite() {
        let p = Point::new(f64::NAN, 0.0, 0.0);
        assert!(matches!(
            Pose::identity().apply(&p),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        assert!(Pose::from_quaternion([1.0, 0.1, 0.0, 0.0], [0.0; 3]).is_err());
        assert!(serde_json::from_str::<Pose>(
            r#"{"rotation":[2.0,0.0,0.0,0.0],"translation":[0.0,0.0,0.0]}"#
        )
        .is_err());
    }

    #[test]
    fn invert_examples() {
        let id = Pose::identity().inverse();
        assert_eq!(id.translation(), [0.0; 3]);
        assert_eq!(id.rotation_angle(), 0.0);

        let p = Pose::from_yaw(0.0, [1.0, 2.0, 3.0]).inverse();
        assert_eq!(p.translation(), [-1.0, -2.0, -3.0]);
    }

    #[test]
    fn invert_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let pose = random_pose(&mut rng);
            let inv = pose.inverse();
            for _ in 0..100 {
                let x = Point::new(
                    rng.gen_range(-200.0..200.0),
                    rng.gen_range(-200.0..200.0),
                    rng.gen_range(-10.0..10.0),
                );
                let back = inv.apply(&pose.apply(&x).unwrap()).unwrap();
                assert!(close(&back, &x, 1e-9));
            }
            let id = pose.compose(&inv);
            assert!(id.translation().iter().all(|v| v.abs() < 1e-9));
            assert!(id.rotation_angle() < 1e-9);
        }
    }

    #[test]
    fn compose_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let (a, b, c) = (
                random_pose(&mut rng),
                random_pose(&mut rng),
                random_pose(&mut rng),
            );
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            let diff = left.inverse().compose(&right);
            assert!(diff.translation().iter().all(|v| v.abs() < 1e-9));
            assert!(diff.rotation_angle() < 1e-9);
        }
    }

    #[test]
    fn normalize_yaw_range() {
        assert_eq!(normalize_yaw(PI), PI);
        assert_eq!(normalize_yaw(-PI), PI);
        assert!((normalize_yaw(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((yaw_difference(PI - 0.1, -PI + 0.1) - 0.2).abs() < 1e-12);
    }

    fn sweep(t: f64, pose: Pose, pts: &[[f64; 3]]) -> Sweep {
        Sweep {
            timestamp: t,
            ego_pose: pose,
            points: pts.iter().map(|p| Point::new(p[0], p[1], p[2])).collect(),
        }
    }

    #[test]
    fn aggregate_single_sweep_is_identity() {
        let s = sweep(1.0, Pose::from_yaw(0.3, [4.0, 1.0, 0.0]), &[[1.0, 2.0, 3.0]]);
        let out = aggregate_sweeps(std::slice::from_ref(&s), 1).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!((out.points[0].x, out.points[0].y), (1.0, 2.0));
        assert_eq!(out.points[0].dt, Some(0.0));
    }

    #[test]
    fn aggregate_stationary_doubles_points() {
        let pts = [[1.0, 2.0, 0.5], [-3.0, 4.0, 1.0]];
        let a = sweep(0.0, Pose::identity(), &pts);
        let b = sweep(0.5, Pose::identity(), &pts);
        let out = aggregate_sweeps(&[a, b], 2).unwrap();
        assert_eq!(out.len(), 4);
        for (i, p) in out.points.iter().enumerate() {
            let src = pts[i % 2];
            assert_eq!((p.x, p.y, p.z), (src[0], src[1], src[2]));
        }
        assert_eq!(out.points[0].dt, Some(-0.5));
        assert_eq!(out.points[3].dt, Some(0.0));
    }

    #[test]
    fn aggregate_moving_ego_aligns_static_point() {
        // world point (20,0,0); ego at x=0 then x=5
        let a = sweep(0.0, Pose::identity(), &[[20.0, 0.0, 0.0]]);
        let b = sweep(0.5, Pose::from_yaw(0.0, [5.0, 0.0, 0.0]), &[[15.0, 0.0, 0.0]]);
        let out = aggregate_sweeps(&[a, b], 5).unwrap();
        assert_eq!(out.len(), 2);
        for p in &out.points {
            assert!(close(p, &Point::new(15.0, 0.0, 0.0), 1e-9));
        }
    }

    #[test]
    fn aggregate_uses_only_last_k() {
        let s: Vec<_> = (0..4)
            .map(|i| sweep(i as f64, Pose::identity(), &[[i as f64, 0.0, 0.0]]))
            .collect();
        let out = aggregate_sweeps(&s, 2).unwrap();
        let xs: Vec<f64> = out.iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![2.0, 3.0]);
    }

    #[test]
    fn aggregate_errors() {
        assert!(matches!(aggregate_sweeps(&[], 3), Err(Error::EmptySweeps)));
        let a = sweep(1.0, Pose::identity(), &[]);
        let b = sweep(1.0, Pose::identity(), &[]);
        assert!(aggregate_sweeps(&[a.clone(), b], 2).is_err());
        assert!(aggregate_sweeps(&[a], 0).is_err());
    }

    #[test]
    fn aggregate_static_world_random_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let world: Vec<[f64; 3]> = (0..20)
            .map(|_| {
                [
                    rng.gen_range(-80.0..80.0),
                    rng.gen_range(-80.0..80.0),
                    rng.gen_range(0.0..3.0),
                ]
            })
            .collect();
        let sweeps: Vec<Sweep> = (0..5)
            .map(|i| {
                let pose = random_pose(&mut rng);
                let inv = pose.inverse();
                let pts: Vec<Point> = world
                    .iter()
                    .map(|w| inv.apply(&Point::new(w[0], w[1], w[2])).unwrap())
                    .collect();
                Sweep {
                    timestamp: i as f64 * 0.5,
                    ego_pose: pose,
                    points: pts,
                }
            })
            .collect();
        let out = aggregate_sweeps(&sweeps, 5).unwrap();
        let n = world.len();
        for s in 1..5 {
            for j in 0..n {
                assert!(close(&out.points[j], &out.points[s * n + j], 1e-9));
            }
        }
    }

    fn car(center: [f64; 3], vel: [f64; 2]) -> Box3D {
        Box3D {
            center,
            dims: [4.5, 2.0, 1.6],
            yaw: 0.2,
            velocity: Some(vel),
            class_id: 1,
            score: 0.7,
        }
    }

    #[test]
    fn compensate_examples() {
        let b = car([50.0, 0.0, 0.0], [2.0, 0.0]);
        let p = Pose::from_yaw(0.4, [3.0, -2.0, 0.0]);
        let same = compensate_box(&b, &p, &p).unwrap();
        assert!((same.center[0] - 50.0).abs() < 1e-12 && same.center[1].abs() < 1e-12);

        let moved = compensate_box(
            &b,
            &Pose::identity(),
            &Pose::from_yaw(0.0, [3.0, 0.0, 0.0]),
        )
        .unwrap();
        assert_eq!(moved.center, [47.0, 0.0, 0.0]);

        // destination ego rotated by -π/2 relative to source: relative yaw +π/2
        let rot = compensate_box(
            &b,
            &Pose::identity(),
            &Pose::from_yaw(-PI / 2.0, [0.0; 3]),
        )
        .unwrap();
        let v = rot.velocity.unwrap();
        assert!(v[0].abs() < 1e-12 && (v[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn compensate_preserves_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let b = car(
                [rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0), 0.8],
                [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)],
            );
            let src = Pose::from_yaw(rng.gen_range(-PI..PI), [rng.gen_range(-50.0..50.0), 1.0, 0.0]);
            let dst = Pose::from_yaw(rng.gen_range(-PI..PI), [rng.gen_range(-50.0..50.0), 2.0, 0.0]);
            let out = compensate_box(&b, &src, &dst).unwrap();
            assert_eq!(out.dims, b.dims);
            assert_eq!(out.class_id, b.class_id);
            assert_eq!(out.score, b.score);
            let speed = |v: [f64; 2]| v[0].hypot(v[1]);
            assert!((speed(out.velocity.unwrap()) - speed(b.velocity.unwrap())).abs() < 1e-12);
            assert!(out.yaw > -PI && out.yaw <= PI);
        }
    }

    #[test]
    fn footprint_containment() {
        let b = Box3D {
            center: [10.0, 0.0, 0.0],
            dims: [4.0, 2.0, 1.5],
            yaw: PI / 2.0,
            velocity: None,
            class_id: 0,
            score: 1.0,
        };
        assert!(b.contains_bev(10.0, 1.9));
        assert!(!b.contains_bev(11.5, 0.0));
        let (x0, y0, x1, y1) = b.bev_aabb();
        assert!((x0 - 9.0).abs() < 1e-12 && (y1 - 2.0).abs() < 1e-12);
        assert!((x1 - 11.0).abs() < 1e-12 && (y0 + 2.0).abs() < 1e-12);
    }
}
