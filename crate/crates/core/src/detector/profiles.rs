//! Named detector presets.
//!
//! Latency presets are anchored on the published per-stage runtimes of each
//! architecture's 50 m configuration; point processing is scaled so that the
//! anchor's runtime is reached at [`nominal_occupancy`] pillars.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    GeneralizationMode, LatencyParams, MeasuredRow, OracleParams, RangeExpertConfig,
    ScoreCalibration, StageTimings,
};
use crate::error::{Error, Result};
use crate::range::grid_side;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "pointpillars-like")]
    PointPillars,
    #[serde(rename = "cbgs-like")]
    Cbgs,
    #[serde(rename = "centerpoint-like")]
    CenterPoint,
    #[serde(rename = "transfusion-like")]
    TransFusion,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::PointPillars,
        Architecture::Cbgs,
        Architecture::CenterPoint,
        Architecture::TransFusion,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::PointPillars => "pointpillars-like",
            Architecture::Cbgs => "cbgs-like",
            Architecture::CenterPoint => "centerpoint-like",
            Architecture::TransFusion => "transfusion-like",
        }
    }

    /// `(range, voxel reciprocal)` of the anchor configuration.
    pub fn anchor_grid(&self) -> (f64, f64) {
        match self {
            Architecture::PointPillars => (50.0, 4.0),
            _ => (50.0, 12.5),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::config(
                    "profile",
                    format!(
                        "unknown profile `{s}`; expected one of {}",
                        Architecture::ALL.map(|a| a.name()).join(", ")
                    ),
                )
            })
    }
}

/// Occupied pillars at which a preset's point processing reaches its anchor runtime.
pub fn nominal_occupancy(arch: Architecture) -> u64 {
    match arch {
        Architecture::PointPillars => 24_000,
        _ => 38_000,
    }
}

fn row(range: f64, s: f64, t: [f64; 5]) -> MeasuredRow {
    MeasuredRow {
        range,
        voxel_reciprocal: s,
        occupied: None,
        timings: StageTimings::from_array(t),
    }
}

/// Published mean stage runtimes (ms) at 50, 100 and 150 m for each architecture.
pub fn reference_runtime_rows(arch: Architecture) -> Vec<MeasuredRow> {
    match arch {
        Architecture::PointPillars => vec![
            row(50.0, 4.0, [10.5, 3.5, 1.9, 1.2, 58.2]),
            row(100.0, 4.0, [25.6, 10.6, 13.1, 4.1, 62.0]),
            row(150.0, 2.0, [4.0, 6.6, 8.1, 2.7, 60.0]),
        ],
        Architecture::Cbgs => vec![
            row(50.0, 12.5, [43.6, 4.7, 2.5, 1.2, 55.9]),
            row(100.0, 6.25, [40.0, 4.7, 2.5, 1.2, 58.6]),
            row(150.0, 3.125, [35.5, 3.0, 1.7, 1.1, 58.8]),
        ],
        Architecture::CenterPoint => vec![
            row(50.0, 12.5, [45.8, 2.7, 0.8, 42.8, 440.9]),
            row(100.0, 6.25, [42.3, 4.8, 0.8, 42.7, 448.1]),
            row(150.0, 3.125, [33.5, 3.3, 0.6, 26.1, 291.1]),
        ],
        Architecture::TransFusion => vec![
            row(50.0, 12.5, [264.9, 4.5, 1.3, 9.8, 1.5]),
            row(100.0, 6.25, [257.7, 4.5, 1.3, 9.3, 1.5]),
            row(150.0, 3.125, [240.9, 3.3, 0.8, 9.0, 1.5]),
        ],
    }
}

/// Latency preset reproducing the anchor row exactly at nominal occupancy.
pub fn latency_preset(arch: Architecture) -> LatencyParams {
    let anchor = reference_runtime_rows(arch)[0];
    let t = anchor.timings;
    let mcells = (grid_side(anchor.range, anchor.voxel_reciprocal) as f64).powi(2) / 1e6;
    let kvox = nominal_occupancy(arch) as f64 / 1000.0;
    LatencyParams {
        c_point_per_kvoxel: t.point_proc / kvox,
        c_backbone_per_mcell: t.backbone / mcells,
        c_neck_per_mcell: t.neck / mcells,
        c_backbone_base: 0.0,
        c_neck_base: 0.0,
        c_head: t.head,
        c_post: t.post_proc,
    }
}

pub fn generalization_preset(arch: Architecture) -> GeneralizationMode {
    match arch {
        Architecture::PointPillars => GeneralizationMode::LocalCalibrated,
        Architecture::Cbgs => GeneralizationMode::GlobalOverconfident,
        Architecture::CenterPoint => GeneralizationMode::SoftTarget,
        Architecture::TransFusion => GeneralizationMode::AbsolutePeCollapse,
    }
}

pub fn oracle_preset(arch: Architecture) -> OracleParams {
    let score_calibration = match arch {
        Architecture::PointPillars | Architecture::CenterPoint => ScoreCalibration::Calibrated,
        Architecture::Cbgs => ScoreCalibration::OverconfidentFar,
        Architecture::TransFusion => ScoreCalibration::ZeroOutsideTrain,
    };
    // global-feature encoders fall apart faster outside the trained range
    let offrange_sigma_slope = match arch {
        Architecture::Cbgs => 0.15,
        _ => 0.02,
    };
    OracleParams {
        base_recall: 0.9,
        density_floor: 5.0,
        recall_decay: 1.0,
        sigma_t0: 0.05,
        sigma_t_slope: 0.002,
        sigma_t_voxel: 0.1,
        offrange_sigma_slope,
        yaw_sigma: 0.05,
        score_calibration,
        fp_rate: 2.0,
        seed: 0,
    }
}

/// Full expert configuration for `train/s -> infer` using an architecture's presets.
pub fn expert(arch: Architecture, train_range: f64, voxel_reciprocal: f64, infer_range: f64) -> RangeExpertConfig {
    RangeExpertConfig {
        train_range,
        voxel_reciprocal,
        infer_range,
        generalization_mode: generalization_preset(arch),
        oracle: oracle_preset(arch),
        latency: latency_preset(arch),
    }
}
