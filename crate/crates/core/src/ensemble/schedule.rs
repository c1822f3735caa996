//! Frame-by-frame execution of range ensembles, synchronous or near-far.

use serde::{Deserialize, Serialize};

use super::{combine_range_ensemble, forecast_detections, NearFarSpec};
use crate::detector::{Detector, DetectorFlag, FrameContext, StageTimings};
use crate::error::{Error, Result};
use crate::geometry::{Box3D, PointCloud, Pose};
use crate::range::donut_crop;

/// One frame of the input stream, already aggregated into the current ego frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamFrame {
    pub index: u64,
    pub timestamp: f64,
    pub ego_pose: Pose,
    pub cloud: PointCloud,
    pub truth: Vec<Box3D>,
    pub annotation_range: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FrameFlag {
    /// Expert was scheduled off but had never run; contributed nothing.
    NoHistory { expert: usize },
    /// Forecast held boxes without velocity in place.
    MissingVelocity { expert: usize, count: usize },
    BeyondAnnotationRange { expert: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub index: u64,
    pub timestamp: f64,
    pub detections: Vec<Box3D>,
    /// Stage sums over experts that ran this frame; forecasting costs nothing.
    pub timings: StageTimings,
    pub ran: Vec<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<FrameFlag>,
}

struct LastOutput {
    detections: Vec<Box3D>,
    pose: Pose,
    timestamp: f64,
}

/// Runs a near-far ensemble over a stream.
///
/// At stream position `t`, expert `i` runs iff `t % frequencies[i] == 0`.
/// An expert that does not run contributes its last real output, forecast
/// from the frame it was produced in to the current frame. Outputs are
/// combined by band routing.
pub fn run_near_far(
    spec: &NearFarSpec,
    stream: &[StreamFrame],
    detectors: &[&dyn Detector],
) -> Result<Vec<FrameResult>> {
    spec.validate()?;
    let ens = &spec.ensemble;
    if detectors.len() != ens.experts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} detectors for {} experts",
            detectors.len(),
            ens.experts.len()
        )));
    }
    let mut last: Vec<Option<LastOutput>> = (0..detectors.len()).map(|_| None).collect();
    let mut results = Vec::with_capacity(stream.len());

    for (t, frame) in stream.iter().enumerate() {
        let mut per_expert = Vec::with_capacity(detectors.len());
        let mut timings = StageTimings::default();
        let mut ran = vec![false; detectors.len()];
        let mut flags = Vec::new();

        for (i, det) in detectors.iter().enumerate() {
            if (t as u64).is_multiple_of(spec.frequencies[i] as u64) {
                let masked;
                let cloud = if ens.test_time_mask {
                    masked = donut_crop(&frame.cloud, &ens.experts[i].band, ens.range_mode);
                    &masked
                } else {
                    &frame.cloud
                };
                let out = det.detect(&FrameContext {
                    frame_index: frame.index,
                    cloud,
                    truth: &frame.truth,
                    annotation_range: frame.annotation_range,
                })?;
                if out.flags.contains(&DetectorFlag::BeyondAnnotationRange) {
                    flags.push(FrameFlag::BeyondAnnotationRange { expert: i });
                }
                timings += out.timings;
                ran[i] = true;
                per_expert.push(out.detections.clone());
                last[i] = Some(LastOutput {
                    detections: out.detections,
                    pose: frame.ego_pose,
                    timestamp: frame.timestamp,
                });
            } else if let Some(prev) = &last[i] {
                let f = forecast_detections(
                    &prev.detections,
                    frame.timestamp - prev.timestamp,
                    &prev.pose,
                    &frame.ego_pose,
                )?;
                if f.missing_velocity > 0 {
                    flags.push(FrameFlag::MissingVelocity {
                        expert: i,
                        count: f.missing_velocity,
                    });
                }
                per_expert.push(f.boxes);
            } else {
                flags.push(FrameFlag::NoHistory { expert: i });
                per_expert.push(Vec::new());
            }
        }

        results.push(FrameResult {
            index: frame.index,
            timestamp: frame.timestamp,
            detections: combine_range_ensemble(ens, &per_expert)?,
            timings,
            ran,
            flags,
        });
    }
    Ok(results)
}

/// Every expert on every frame.
pub fn run_range_ensemble(
    spec: &super::EnsembleSpec,
    stream: &[StreamFrame],
    detectors: &[&dyn Detector],
) -> Result<Vec<FrameResult>> {
    run_near_far(&NearFarSpec::synchronous(spec.clone()), stream, detectors)
}
