//! Synthetic driving scenarios: ego trajectory, constant-velocity objects,
//! LiDAR returns whose density falls off as 1/range², and per-frame annotations.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::detector::stream_seed;
use crate::ensemble::StreamFrame;
use crate::error::{Error, Result};
use crate::geometry::{aggregate_sweeps, normalize_yaw, Box3D, Point, Pose, Sweep};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum EgoMotion {
    Static,
    /// Unicycle motion from the origin: forward speed (m/s) and yaw rate (rad/s).
    ConstantVelocity { speed: f64, yaw_rate: f64 },
    /// Piecewise-linear path through `(t, x, y, yaw)` samples, held at the ends.
    Waypoints { points: Vec<[f64; 4]> },
}

impl EgoMotion {
    pub fn pose_at(&self, t: f64) -> Pose {
        match self {
            EgoMotion::Static => Pose::identity(),
            EgoMotion::ConstantVelocity { speed, yaw_rate } => {
                let yaw = yaw_rate * t;
                let (x, y) = if *yaw_rate == 0.0 {
                    (speed * t, 0.0)
                } else {
                    let rho = speed / yaw_rate;
                    (rho * yaw.sin(), rho * (1.0 - yaw.cos()))
                };
                Pose::from_yaw(yaw, [x, y, 0.0])
            }
            EgoMotion::Waypoints { points } => {
                let first = points[0];
                let last = points[points.len() - 1];
                let [x, y, yaw] = if t <= first[0] {
                    [first[1], first[2], first[3]]
                } else if t >= last[0] {
                    [last[1], last[2], last[3]]
                } else {
                    let k = points.partition_point(|p| p[0] <= t);
                    let (a, b) = (points[k - 1], points[k]);
                    let w = (t - a[0]) / (b[0] - a[0]);
                    let dyaw = normalize_yaw(b[3] - a[3]);
                    [a[1] + w * (b[1] - a[1]), a[2] + w * (b[2] - a[2]), a[3] + w * dyaw]
                };
                Pose::from_yaw(yaw, [x, y, 0.0])
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            EgoMotion::Static => Ok(()),
            EgoMotion::ConstantVelocity { speed, yaw_rate } => {
                if !speed.is_finite() || !yaw_rate.is_finite() {
                    return Err(Error::config("ego_motion", "speed and yaw_rate must be finite"));
                }
                Ok(())
            }
            EgoMotion::Waypoints { points } => {
                if points.is_empty() {
                    return Err(Error::config("ego_motion.points", "at least one waypoint required"));
                }
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::config("ego_motion.points", "waypoints must be finite"));
                }
                if points.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return Err(Error::config("ego_motion.points", "waypoint times must strictly increase"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub class_id: u16,
    pub name: String,
    /// length, width, height
    pub dims: [f64; 3],
    /// Relative spawn frequency.
    pub weight: f64,
    pub max_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectSpec {
    pub count: usize,
    pub classes: Vec<ClassSpec>,
    /// Spawn ranges are uniform in `[min_range, max_range]` around the first ego pose.
    pub min_range: f64,
    pub max_range: f64,
    /// Hard cap on any object's speed, m/s.
    pub speed_clamp: f64,
    /// Minimum BEV distance between spawn centers.
    pub min_separation: f64,
}

impl Default for ObjectSpec {
    fn default() -> Self {
        let class = |class_id, name: &str, dims, weight, max_speed| ClassSpec {
            class_id,
            name: name.to_owned(),
            dims,
            weight,
            max_speed,
        };
        ObjectSpec {
            count: 60,
            classes: vec![
                class(0, "car", [4.6, 1.9, 1.7], 0.5, 12.0),
                class(1, "truck", [8.0, 2.5, 3.2], 0.2, 10.0),
                class(2, "pedestrian", [0.8, 0.7, 1.8], 0.3, 1.5),
            ],
            min_range: 5.0,
            max_range: 150.0,
            speed_clamp: 15.0,
            min_separation: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarSpec {
    /// Expected returns on an object at range r is `object_k / r²`.
    pub object_k: f64,
    /// Ground returns per m² at range r is `ground_k / r²`.
    pub ground_k: f64,
    /// Uniform clutter returns per sweep over the sensor disk.
    pub clutter_per_sweep: f64,
    pub min_range: f64,
    pub max_range: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        LidarSpec {
            object_k: 20_000.0,
            ground_k: 400.0,
            clutter_per_sweep: 500.0,
            min_range: 2.5,
            max_range: 150.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub n_frames: usize,
    /// Seconds between annotated frames.
    pub frame_dt: f64,
    /// Sweeps captured per frame, evenly spaced and ending at the frame timestamp.
    pub sweeps_per_frame: usize,
    pub ego_motion: EgoMotion,
    pub objects: ObjectSpec,
    pub lidar: LidarSpec,
    /// Objects farther than this from the ego are not annotated.
    pub annotation_range: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            n_frames: 20,
            frame_dt: 0.5,
            sweeps_per_frame: 5,
            ego_motion: EgoMotion::ConstantVelocity {
                speed: 8.0,
                yaw_rate: 0.02,
            },
            objects: ObjectSpec::default(),
            lidar: LidarSpec::default(),
            annotation_range: 150.0,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(Error::config("n_frames", "must be >= 1"));
        }
        if self.sweeps_per_frame == 0 {
            return Err(Error::config("sweeps_per_frame", "must be >= 1"));
        }
        let positive = [
            ("frame_dt", self.frame_dt),
            ("annotation_range", self.annotation_range),
            ("objects.max_range", self.objects.max_range),
            ("lidar.max_range", self.lidar.max_range),
            ("lidar.min_range", self.lidar.min_range),
        ];
        for (path, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(path, format!("must be finite and > 0, got {v}")));
            }
        }
        let non_neg = [
            ("objects.min_range", self.objects.min_range),
            ("objects.speed_clamp", self.objects.speed_clamp),
            ("objects.min_separation", self.objects.min_separation),
            ("lidar.object_k", self.lidar.object_k),
            ("lidar.ground_k", self.lidar.ground_k),
            ("lidar.clutter_per_sweep", self.lidar.clutter_per_sweep),
        ];
        for (path, v) in non_neg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(path, format!("must be finite and >= 0, got {v}")));
            }
        }
        if self.objects.min_range > self.objects.max_range {
            return Err(Error::config("objects.min_range", "exceeds objects.max_range"));
        }
        if self.lidar.min_range >= self.lidar.max_range {
            return Err(Error::config("lidar.min_range", "must be below lidar.max_range"));
        }
        if self.objects.count > 0 && self.objects.classes.is_empty() {
            return Err(Error::config("objects.classes", "at least one class required"));
        }
        for (i, c) in self.objects.classes.iter().enumerate() {
            if c.dims.iter().any(|&d| !(d.is_finite() && d > 0.0)) {
                return Err(Error::config(format!("objects.classes[{i}].dims"), "must be positive"));
            }
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(Error::config(format!("objects.classes[{i}].weight"), "must be positive"));
            }
            if !(c.max_speed.is_finite() && c.max_speed >= 0.0) {
                return Err(Error::config(format!("objects.classes[{i}].max_speed"), "must be >= 0"));
            }
        }
        self.ego_motion.validate()
    }

    pub fn sweep_dt(&self) -> f64 {
        self.frame_dt / self.sweeps_per_frame as f64
    }

    pub fn frame_timestamp(&self, frame: usize) -> f64 {
        frame as f64 * self.frame_dt
    }
}

/// An object moving at constant world velocity from its spawn position at t = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTrack {
    pub class_id: u16,
    pub dims: [f64; 3],
    /// World BEV position at t = 0.
    pub start: [f64; 2],
    pub velocity: [f64; 2],
    pub yaw: f64,
}

impl ObjectTrack {
    pub fn position_at(&self, t: f64) -> [f64; 2] {
        [
            self.start[0] + self.velocity[0] * t,
            self.start[1] + self.velocity[1] * t,
        ]
    }

    /// Annotation box of this object at time `t`, in the ego frame of `ego`.
    pub fn box_in_ego(&self, t: f64, ego: &Pose) -> Box3D {
        let to_ego = ego.inverse();
        let [x, y] = self.position_at(t);
        let center = to_ego.transform_position([x, y, 0.5 * self.dims[2]]);
        let v = to_ego.rotate_vector([self.velocity[0], self.velocity[1], 0.0]);
        Box3D {
            center,
            dims: self.dims,
            yaw: normalize_yaw(self.yaw - ego.yaw()),
            velocity: Some([v[0], v[1]]),
            class_id: self.class_id,
            score: 1.0,
        }
    }
}

/// Annotations of one frame, in that frame's ego coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub index: u64,
    pub timestamp: f64,
    /// Index of the sweep captured at this frame's timestamp.
    pub sweep_index: usize,
    pub ego_pose: Pose,
    pub boxes: Vec<Box3D>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub objects: Vec<ObjectTrack>,
    pub sweeps: Vec<Sweep>,
    pub frames: Vec<FrameTruth>,
}

impl Scenario {
    /// Per-frame stream with each frame's cloud aggregated from its last `k` sweeps.
    pub fn stream(&self, k: usize) -> Result<Vec<StreamFrame>> {
        build_stream(&self.sweeps, &self.frames, k, self.spec.annotation_range)
    }
}

/// Aggregates sweeps for every annotated frame.
pub fn build_stream(
    sweeps: &[Sweep],
    frames: &[FrameTruth],
    k: usize,
    annotation_range: f64,
) -> Result<Vec<StreamFrame>> {
    frames
        .iter()
        .map(|f| {
            if f.sweep_index >= sweeps.len() {
                return Err(Error::InvalidArgument(format!(
                    "frame {} references missing sweep {}",
                    f.index, f.sweep_index
                )));
            }
            Ok(StreamFrame {
                index: f.index,
                timestamp: f.timestamp,
                ego_pose: f.ego_pose,
                cloud: aggregate_sweeps(&sweeps[..=f.sweep_index], k)?,
                truth: f.boxes.clone(),
                annotation_range,
            })
        })
        .collect()
}

fn spawn_objects(spec: &ScenarioSpec) -> Vec<ObjectTrack> {
    let o = &spec.objects;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, 0, 100, 0));
    let ego0 = spec.ego_motion.pose_at(0.0);
    let total_weight: f64 = o.classes.iter().map(|c| c.weight).sum();
    let mut objects: Vec<ObjectTrack> = Vec::with_capacity(o.count);
    let mut placed_ego: Vec<[f64; 2]> = Vec::with_capacity(o.count);

    while objects.len() < o.count {
        let mut pick = rng.gen::<f64>() * total_weight;
        let class = o
            .classes
            .iter()
            .find(|c| {
                pick -= c.weight;
                pick < 0.0
            })
            .unwrap_or(&o.classes[o.classes.len() - 1]);

        // Rejection keeps spawn footprints apart; give up on spacing after many tries.
        let mut pos = [0.0; 2];
        for attempt in 0..1000 {
            let r = rng.gen_range(o.min_range..=o.max_range);
            let theta = rng.gen_range(-PI..PI);
            pos = [r * theta.cos(), r * theta.sin()];
            let clear = placed_ego
                .iter()
                .all(|q| (q[0] - pos[0]).hypot(q[1] - pos[1]) >= o.min_separation);
            if clear || attempt == 999 {
                break;
            }
        }
        placed_ego.push(pos);

        let speed = rng.gen_range(0.0..=class.max_speed).min(o.speed_clamp);
        let heading = rng.gen_range(-PI..PI);
        let world = ego0.transform_position([pos[0], pos[1], 0.0]);
        let yaw = normalize_yaw(heading);
        objects.push(ObjectTrack {
            class_id: class.class_id,
            dims: class.dims,
            start: [world[0], world[1]],
            velocity: [speed * yaw.cos(), speed * yaw.sin()],
            yaw,
        });
    }
    objects
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as usize).unwrap_or(0)
}

/// Points on the visible body of `b`, drawn uniformly over a slightly shrunken footprint.
fn object_points(b: &Box3D, range: f64, k: f64, rng: &mut ChaCha8Rng, out: &mut Vec<Point>) {
    let n = poisson(rng, k / (range * range));
    let (s, c) = b.yaw.sin_cos();
    let (hl, hw, h) = (0.45 * b.dims[0], 0.45 * b.dims[1], b.dims[2]);
    for _ in 0..n {
        let u = rng.gen_range(-hl..=hl);
        let v = rng.gen_range(-hw..=hw);
        let z = rng.gen_range(0.05 * h..=0.95 * h);
        out.push(Point::new(
            b.center[0] + c * u - s * v,
            b.center[1] + s * u + c * v,
            b.center[2] - 0.5 * h + z,
        ));
    }
}

fn sweep_points(
    spec: &ScenarioSpec,
    objects: &[ObjectTrack],
    sweep_index: usize,
    t: f64,
    ego: &Pose,
) -> Vec<Point> {
    let l = &spec.lidar;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, sweep_index as u64, 101, 0));
    let mut points = Vec::new();

    for obj in objects {
        let b = obj.box_in_ego(t, ego);
        let range = b.center[0].hypot(b.center[1]);
        if range >= l.min_range && range < l.max_range {
            object_points(&b, range, l.object_k, &mut rng, &mut points);
        }
    }

    // Ground density ground_k/r² per m² integrates to a log-uniform range law.
    let ln_ratio = (l.max_range / l.min_range).ln();
    let n_ground = poisson(&mut rng, 2.0 * PI * l.ground_k * ln_ratio);
    for _ in 0..n_ground {
        let r = l.min_range * (rng.gen::<f64>() * ln_ratio).exp();
        let theta = rng.gen_range(-PI..PI);
        points.push(Point::new(r * theta.cos(), r * theta.sin(), 0.0));
    }

    let n_clutter = poisson(&mut rng, l.clutter_per_sweep);
    for _ in 0..n_clutter {
        let r = l.max_range * rng.gen::<f64>().sqrt();
        let theta = rng.gen_range(-PI..PI);
        points.push(Point::new(r * theta.cos(), r * theta.sin(), rng.gen_range(0.0..2.0)));
    }
    points
}

/// Generates sweeps and per-frame annotations. Deterministic in `spec.seed`.
///
/// Frame `f` sits at `t = f * frame_dt`; its sweeps are spaced `frame_dt /
/// sweeps_per_frame` apart and end at the frame timestamp, so early sweeps of
/// frame 0 have negative timestamps.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let objects = spawn_objects(spec);
    let spf = spec.sweeps_per_frame;
    let sweep_dt = spec.sweep_dt();

    let mut sweeps = Vec::with_capacity(spec.n_frames * spf);
    let mut frames = Vec::with_capacity(spec.n_frames);
    for f in 0..spec.n_frames {
        let t_frame = spec.frame_timestamp(f);
        for j in 0..spf {
            let t = if j + 1 == spf {
                t_frame
            } else {
                t_frame - (spf - 1 - j) as f64 * sweep_dt
            };
            let ego = spec.ego_motion.pose_at(t);
            let index = sweeps.len();
            sweeps.push(Sweep {
                timestamp: t,
                ego_pose: ego,
                points: sweep_points(spec, &objects, index, t, &ego),
            });
        }
        let ego = spec.ego_motion.pose_at(t_frame);
        let boxes = objects
            .iter()
            .map(|o| o.box_in_ego(t_frame, &ego))
            .filter(|b| b.center[0].hypot(b.center[1]) < spec.annotation_range)
            .collect();
        frames.push(FrameTruth {
            index: f as u64,
            timestamp: t_frame,
            sweep_index: sweeps.len() - 1,
            ego_pose: ego,
            boxes,
        });
    }
    Ok(Scenario {
        spec: spec.clone(),
        objects,
        sweeps,
        frames,
    })
}
