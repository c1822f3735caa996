//! Range ensembles, NMS, constant-velocity forecasting and the near-far scheduler.

mod forecast;
mod nms;
mod schedule;

use serde::{Deserialize, Serialize};

pub use forecast::{forecast_detections, Forecast, Forecaster};
pub use nms::{greedy_nms, NmsMode};
pub(crate) use nms::score_order;
pub use schedule::{run_near_far, run_range_ensemble, FrameFlag, FrameResult, StreamFrame};

use crate::detector::RangeExpertConfig;
use crate::error::{Error, Result};
use crate::geometry::Box3D;
use crate::range::{filter_detections_by_band, RangeBand, RangeMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    /// Each expert only reports objects inside the band it owns.
    #[default]
    BandRoute,
    /// Pool every expert's detections and run NMS over the union.
    NmsPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub config: RangeExpertConfig,
    pub band: RangeBand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub experts: Vec<EnsembleMember>,
    pub combine_mode: CombineMode,
    /// Crop each expert's input cloud to its owned band.
    pub test_time_mask: bool,
    #[serde(default = "default_nms_threshold")]
    pub nms_threshold: f64,
    #[serde(default)]
    pub nms_mode: NmsMode,
    #[serde(default)]
    pub range_mode: RangeMode,
}

fn default_nms_threshold() -> f64 {
    1.0
}

/// Checks that bands are pairwise disjoint and tile `[0, max_outer)` without gaps.
pub fn validate_band_cover(bands: &[RangeBand]) -> Result<()> {
    if bands.is_empty() {
        return Err(Error::BandCover("no bands".into()));
    }
    let mut sorted: Vec<RangeBand> = bands.to_vec();
    sorted.sort_by(|a, b| a.inner().total_cmp(&b.inner()));
    if sorted[0].inner() != 0.0 {
        return Err(Error::BandCover(format!(
            "cover starts at {} instead of 0",
            sorted[0].inner()
        )));
    }
    for w in sorted.windows(2) {
        if w[1].inner() < w[0].outer() {
            return Err(Error::BandCover(format!("bands {} and {} overlap", w[0], w[1])));
        }
        if w[1].inner() > w[0].outer() {
            return Err(Error::BandCover(format!(
                "gap between {} and {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

impl EnsembleSpec {
    /// A single expert owning `[0, ∞)`.
    pub fn single(config: RangeExpertConfig) -> Self {
        EnsembleSpec {
            experts: vec![EnsembleMember {
                config,
                band: RangeBand::everything(),
            }],
            combine_mode: CombineMode::BandRoute,
            test_time_mask: false,
            nms_threshold: default_nms_threshold(),
            nms_mode: NmsMode::Greedy,
            range_mode: RangeMode::BevL2,
        }
    }

    pub fn band_route(members: Vec<EnsembleMember>, test_time_mask: bool) -> Result<Self> {
        let spec = EnsembleSpec {
            experts: members,
            combine_mode: CombineMode::BandRoute,
            test_time_mask,
            nms_threshold: default_nms_threshold(),
            nms_mode: NmsMode::Greedy,
            range_mode: RangeMode::BevL2,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bands: Vec<RangeBand> = self.experts.iter().map(|m| m.band).collect();
        validate_band_cover(&bands)?;
        if !(self.nms_threshold > 0.0 && self.nms_threshold.is_finite()) {
            return Err(Error::config(
                "nms_threshold",
                format!("must be positive, got {}", self.nms_threshold),
            ));
        }
        for (i, m) in self.experts.iter().enumerate() {
            m.config
                .validate()
                .map_err(|e| crate::detector::prefix_path(e, &format!("experts[{i}].config")))?;
        }
        Ok(())
    }

    pub fn bands(&self) -> Vec<RangeBand> {
        self.experts.iter().map(|m| m.band).collect()
    }

    /// Index of the expert owning the band that starts at 0.
    pub fn innermost(&self) -> usize {
        self.experts
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.band.inner().total_cmp(&b.1.band.inner()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearFarSpec {
    pub ensemble: EnsembleSpec,
    /// Expert `i` runs on frames where `t % frequencies[i] == 0`.
    pub frequencies: Vec<u32>,
    #[serde(default)]
    pub forecaster: Forecaster,
}

impl NearFarSpec {
    pub fn new(ensemble: EnsembleSpec, frequencies: Vec<u32>) -> Result<Self> {
        let spec = NearFarSpec {
            ensemble,
            frequencies,
            forecaster: Forecaster::ConstantVelocity,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Every expert runs every frame.
    pub fn synchronous(ensemble: EnsembleSpec) -> Self {
        let n = ensemble.experts.len();
        NearFarSpec {
            ensemble,
            frequencies: vec![1; n],
            forecaster: Forecaster::ConstantVelocity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ensemble.validate()?;
        if self.frequencies.len() != self.ensemble.experts.len() {
            return Err(Error::config(
                "frequencies",
                format!(
                    "{} frequencies for {} experts",
                    self.frequencies.len(),
                    self.ensemble.experts.len()
                ),
            ));
        }
        if let Some(i) = self.frequencies.iter().position(|&f| f == 0) {
            return Err(Error::config(format!("frequencies[{i}]"), "must be >= 1"));
        }
        let near = self.ensemble.innermost();
        if self.frequencies[near] != 1 {
            return Err(Error::config(
                format!("frequencies[{near}]"),
                "the expert owning the innermost band must run every frame",
            ));
        }
        if self.ensemble.combine_mode != CombineMode::BandRoute && self.frequencies.iter().any(|&f| f > 1) {
            return Err(Error::config(
                "ensemble.combine_mode",
                "near-far scheduling requires band_route",
            ));
        }
        Ok(())
    }
}

/// Merges per-expert detections (all in one ego frame) into the ensemble output.
pub fn combine_range_ensemble(spec: &EnsembleSpec, per_expert: &[Vec<Box3D>]) -> Result<Vec<Box3D>> {
    if per_expert.len() != spec.experts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} detection sets for {} experts",
            per_expert.len(),
            spec.experts.len()
        )));
    }
    match spec.combine_mode {
        CombineMode::BandRoute => Ok(spec
            .experts
            .iter()
            .zip(per_expert)
            .flat_map(|(m, dets)| filter_detections_by_band(dets, &m.band, spec.range_mode))
            .collect()),
        CombineMode::NmsPool => {
            let pooled: Vec<Box3D> = per_expert.iter().flatten().copied().collect();
            greedy_nms(&pooled, spec.nms_threshold, spec.nms_mode)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::profiles::{expert, Architecture};
    use crate::range::box_range;

    fn band(a: f64, b: f64) -> RangeBand {
        RangeBand::new(a, b).unwrap()
    }

    fn member(a: f64, b: f64) -> EnsembleMember {
        EnsembleMember {
            config: expert(Architecture::PointPillars, b.min(150.0), 4.0, b.min(150.0)),
            band: band(a, b),
        }
    }

    fn det_at(r: f64, score: f64) -> Box3D {
        Box3D {
            center: [r, 0.0, 0.0],
            dims: [4.0, 2.0, 1.5],
            yaw: 0.0,
            velocity: None,
            class_id: 0,
            score,
        }
    }

    #[test]
    fn band_cover_validation() {
        assert!(validate_band_cover(&[band(0.0, 50.0), band(50.0, 100.0)]).is_ok());
        assert!(validate_band_cover(&[band(50.0, 100.0), band(0.0, 50.0)]).is_ok());
        assert!(validate_band_cover(&[band(0.0, 50.0), band(40.0, 100.0)]).is_err());
        assert!(validate_band_cover(&[band(0.0, 50.0), band(60.0, 100.0)]).is_err());
        assert!(validate_band_cover(&[band(10.0, 50.0)]).is_err());
        assert!(validate_band_cover(&[]).is_err());
    }

    #[test]
    fn single_expert_is_identity() {
        let spec = EnsembleSpec::single(expert(Architecture::PointPillars, 50.0, 8.0, 50.0));
        let dets = vec![det_at(10.0, 0.5), det_at(500.0, 0.2)];
        assert_eq!(combine_range_ensemble(&spec, std::slice::from_ref(&dets)).unwrap(), dets);
    }

    #[test]
    fn band_route_respects_bands() {
        let spec = EnsembleSpec::band_route(
            vec![member(0.0, 50.0), member(50.0, 100.0), member(100.0, 150.0)],
            false,
        )
        .unwrap();
        let per: Vec<Vec<Box3D>> = (0..3)
            .map(|i| (0..15).map(|k| det_at(k as f64 * 10.0 + i as f64, 0.5)).collect())
            .collect();
        let out = combine_range_ensemble(&spec, &per).unwrap();
        for d in &out {
            let r = box_range(d, RangeMode::BevL2);
            let owner = (d.center[0] as usize) % 10;
            assert!(spec.experts[owner].band.contains(r));
        }
        assert!(combine_range_ensemble(&spec, &per[..2]).is_err());
    }

    #[test]
    fn nms_pool_removes_cross_expert_duplicates() {
        let mut spec = EnsembleSpec::band_route(vec![member(0.0, 50.0), member(50.0, 100.0)], false).unwrap();
        spec.combine_mode = CombineMode::NmsPool;
        let out = combine_range_ensemble(&spec, &[vec![det_at(49.0, 0.9)], vec![det_at(49.2, 0.6)]]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 0.9);
    }

    #[test]
    fn near_far_validation() {
        let ens = EnsembleSpec::band_route(vec![member(0.0, 50.0), member(50.0, 100.0)], false).unwrap();
        assert!(NearFarSpec::new(ens.clone(), vec![1, 2]).is_ok());
        assert!(NearFarSpec::new(ens.clone(), vec![2, 1]).is_err());
        assert!(NearFarSpec::new(ens.clone(), vec![1, 0]).is_err());
        assert!(NearFarSpec::new(ens, vec![1]).is_err());
    }
}
