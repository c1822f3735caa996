//! Detector contract, range-expert configuration, the synthetic oracle
//! detector and the stage latency model.

mod latency;
mod oracle;
pub mod profiles;

use serde::{Deserialize, Serialize};

pub use latency::{
    calibrate_latency, predict_latency, predict_stages, Calibration, LatencyParams, MeasuredRow,
    StageTimings,
};
pub use oracle::{oracle_detect, points_on_object, OracleOutput};
pub(crate) use oracle::stream_seed;

use crate::error::{Error, Result};
use crate::geometry::{Box3D, PointCloud};
use crate::range::voxelize;

/// How an expert behaves when run at an inference range different from its training range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneralizationMode {
    /// Degrades beyond the training range but lowers confidence accordingly.
    LocalCalibrated,
    /// Degrades beyond the training range while staying confident.
    GlobalOverconfident,
    /// No degradation beyond the training range.
    SoftTarget,
    /// Almost everything is suppressed whenever inference range differs from training range.
    AbsolutePeCollapse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreCalibration {
    Calibrated,
    OverconfidentFar,
    ZeroOutsideTrain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleParams {
    pub base_recall: f64,
    /// Points on an object below which recall decays.
    pub density_floor: f64,
    pub recall_decay: f64,
    /// Translation noise std at range 0, meters.
    pub sigma_t0: f64,
    /// Additional translation std per meter of range.
    pub sigma_t_slope: f64,
    /// Additional translation std per meter of voxel edge.
    pub sigma_t_voxel: f64,
    /// Additional translation std per meter beyond the training range
    /// (ignored by `soft_target` and `absolute_pe_collapse`).
    #[serde(default)]
    pub offrange_sigma_slope: f64,
    pub yaw_sigma: f64,
    pub score_calibration: ScoreCalibration,
    /// Expected false positives per frame.
    pub fp_rate: f64,
    pub seed: u64,
}

impl OracleParams {
    /// Perfect detector: every annotated object inside the inference range, no noise, no false positives.
    pub fn noiseless(seed: u64) -> Self {
        OracleParams {
            base_recall: 1.0,
            density_floor: 0.0,
            recall_decay: 1.0,
            sigma_t0: 0.0,
            sigma_t_slope: 0.0,
            sigma_t_voxel: 0.0,
            offrange_sigma_slope: 0.0,
            yaw_sigma: 0.0,
            score_calibration: ScoreCalibration::Calibrated,
            fp_rate: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let non_neg = [
            ("density_floor", self.density_floor),
            ("recall_decay", self.recall_decay),
            ("sigma_t0", self.sigma_t0),
            ("sigma_t_slope", self.sigma_t_slope),
            ("sigma_t_voxel", self.sigma_t_voxel),
            ("offrange_sigma_slope", self.offrange_sigma_slope),
            ("yaw_sigma", self.yaw_sigma),
            ("fp_rate", self.fp_rate),
        ];
        for (name, v) in non_neg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.base_recall) {
            return Err(Error::config(
                "base_recall",
                format!("must be in [0, 1], got {}", self.base_recall),
            ));
        }
        Ok(())
    }
}

/// A range expert `r1/s -> r2`: trained at `train_range`, run at `infer_range`,
/// one voxel reciprocal shared by training and inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeExpertConfig {
    pub train_range: f64,
    pub voxel_reciprocal: f64,
    pub infer_range: f64,
    pub generalization_mode: GeneralizationMode,
    pub oracle: OracleParams,
    pub latency: LatencyParams,
}

impl RangeExpertConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("train_range", self.train_range),
            ("voxel_reciprocal", self.voxel_reciprocal),
            ("infer_range", self.infer_range),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, format!("must be finite and > 0, got {v}")));
            }
        }
        self.oracle
            .validate()
            .map_err(|e| prefix_path(e, "oracle"))?;
        self.latency
            .validate()
            .map_err(|e| match e {
                Error::Config { .. } => prefix_path(e, "latency"),
                other => Error::config("latency", other.to_string()),
            })?;
        Ok(())
    }

    /// Notation `r1/s -> r2`, e.g. `50/8 → 100`.
    pub fn label(&self) -> String {
        format!(
            "{}/{} → {}",
            self.train_range, self.voxel_reciprocal, self.infer_range
        )
    }
}

pub(crate) fn prefix_path(e: Error, prefix: &str) -> Error {
    match e {
        Error::Config { path, message } => Error::config(format!("{prefix}.{path}"), message),
        other => other,
    }
}

/// Everything a detector may look at for one frame, all in the current ego frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameContext<'a> {
    pub frame_index: u64,
    pub cloud: &'a PointCloud,
    /// Annotations; only the oracle detector reads them.
    pub truth: &'a [Box3D],
    /// Range up to which the scenario is annotated.
    pub annotation_range: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorFlag {
    /// Inference range exceeds the annotated range; recall beyond it cannot be scored.
    BeyondAnnotationRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorOutput {
    pub detections: Vec<Box3D>,
    pub timings: StageTimings,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<DetectorFlag>,
}

/// Anything that turns a frame into detections plus modeled stage timings.
pub trait Detector: Send + Sync {
    fn detect(&self, frame: &FrameContext<'_>) -> Result<DetectorOutput>;
}

/// Oracle detector paired with the latency model of its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleDetector {
    pub config: RangeExpertConfig,
}

impl OracleDetector {
    pub fn new(config: RangeExpertConfig) -> Result<Self> {
        config.validate()?;
        Ok(OracleDetector { config })
    }
}

impl Detector for OracleDetector {
    fn detect(&self, frame: &FrameContext<'_>) -> Result<DetectorOutput> {
        let c = &self.config;
        let out = oracle_detect(c, frame.truth, frame.cloud, frame.frame_index, frame.annotation_range);
        let grid = voxelize(frame.cloud, c.infer_range, c.voxel_reciprocal)?;
        let mut flags = Vec::new();
        if out.beyond_annotation_range {
            flags.push(DetectorFlag::BeyondAnnotationRange);
        }
        Ok(DetectorOutput {
            detections: out.detections,
            timings: predict_latency(&c.latency, &grid),
            flags,
        })
    }
}
