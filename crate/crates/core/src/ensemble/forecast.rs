use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compensate_box, Box3D, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Forecaster {
    #[default]
    ConstantVelocity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub boxes: Vec<Box3D>,
    /// Boxes that had no velocity and were held in place.
    pub missing_velocity: usize,
}

/// Moves detections from the ego frame of `pose_then` to that of `pose_now`,
/// `dt` seconds later, assuming constant world-frame velocity.
///
/// Each box is first ego-motion compensated, then advanced along its
/// compensated velocity.
pub fn forecast_detections(dets: &[Box3D], dt: f64, pose_then: &Pose, pose_now: &Pose) -> Result<Forecast> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("forecast dt must be positive, got {dt}")));
    }
    let mut missing_velocity = 0;
    let boxes = dets
        .iter()
        .map(|b| {
            let mut out = compensate_box(b, pose_then, pose_now)?;
            match out.velocity {
                Some(v) => {
                    out.center[0] += v[0] * dt;
                    out.center[1] += v[1] * dt;
                }
                None => missing_velocity += 1,
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Forecast {
        boxes,
        missing_velocity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(center: [f64; 3], velocity: Option<[f64; 2]>) -> Box3D {
        Box3D {
            center,
            dims: [4.0, 2.0, 1.5],
            yaw: 0.0,
            velocity,
            class_id: 0,
            score: 0.8,
        }
    }

    #[test]
    fn static_ego_advances_center() {
        let out = forecast_detections(&[b([10.0, 0.0, 0.0], Some([2.0, 0.0]))], 0.5, &Pose::identity(), &Pose::identity())
            .unwrap();
        assert_eq!(out.boxes[0].center, [11.0, 0.0, 0.0]);
        assert_eq!(out.boxes[0].score, 0.8);
    }

    #[test]
    fn zero_velocity_is_pure_compensation() {
        let out = forecast_detections(
            &[b([10.0, 4.0, 0.0], Some([0.0, 0.0]))],
            1.7,
            &Pose::identity(),
            &Pose::from_yaw(0.0, [3.0, 0.0, 0.0]),
        )
        .unwrap();
        assert_eq!(out.boxes[0].center, [7.0, 4.0, 0.0]);
    }

    #[test]
    fn missing_velocity_flagged() {
        let out = forecast_detections(&[b([1.0, 0.0, 0.0], None)], 0.5, &Pose::identity(), &Pose::identity()).unwrap();
        assert_eq!(out.missing_velocity, 1);
        assert_eq!(out.boxes[0].center, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn nonpositive_dt_rejected() {
        assert!(forecast_detections(&[], 0.0, &Pose::identity(), &Pose::identity()).is_err());
    }

    #[test]
    fn matches_closed_form_with_moving_ego() {
        // object: world p(t) = p0 + v t; ego: yaw rate w, speed u along heading
        let (p0, v) = ([40.0, 10.0], [-3.0, 1.5]);
        let (u, w) = (8.0, 0.1);
        let ego = |t: f64| {
            let th = w * t;
            // integrate unicycle motion
            let (x, y) = ((u / w) * th.sin(), (u / w) * (1.0 - th.cos()));
            Pose::from_yaw(th, [x, y, 0.0])
        };
        let gt_at = |t: f64| {
            let world = [p0[0] + v[0] * t, p0[1] + v[1] * t, 0.8];
            let pose = ego(t);
            let inv = pose.inverse();
            let c = inv.transform_position(world);
            let vv = inv.rotate_vector([v[0], v[1], 0.0]);
            b(c, Some([vv[0], vv[1]]))
        };
        let (t0, t1) = (1.0, 1.5);
        let out = forecast_detections(&[gt_at(t0)], t1 - t0, &ego(t0), &ego(t1)).unwrap();
        let want = gt_at(t1);
        for k in 0..3 {
            assert!((out.boxes[0].center[k] - want.center[k]).abs() < 1e-9);
        }
    }
}
