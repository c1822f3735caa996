//! Matching, AP, true-positive errors, CDS/NDS composites and per-band cohort reports.

mod ap;
mod latency;
mod matching;
mod metrics;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use ap::{average_precision, ApInterpolation};
pub use latency::{latency_stats, LatencyStats};
pub use matching::{match_frame, FrameMatch, MatchPair};
pub use metrics::{
    aligned_scale_error, cds, composite_scores, nds, tp_errors, CompositeMetric, ErrorNormalizers,
    TpErrors,
};

use crate::error::{Error, Result};
use crate::geometry::Box3D;
use crate::range::{filter_detections_by_band, RangeBand, RangeMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchSpec {
    /// BEV center-distance thresholds in meters; AP is averaged over them.
    pub thresholds: Vec<f64>,
    /// Threshold whose matches feed the true-positive errors.
    pub tp_threshold: f64,
    pub interpolation: ApInterpolation,
    pub normalizers: ErrorNormalizers,
    pub range_mode: RangeMode,
}

impl Default for MatchSpec {
    fn default() -> Self {
        MatchSpec {
            thresholds: vec![0.5, 1.0, 2.0, 4.0],
            tp_threshold: 2.0,
            interpolation: ApInterpolation::Points101,
            normalizers: ErrorNormalizers::default(),
            range_mode: RangeMode::BevL2,
        }
    }
}

impl MatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::config("thresholds", "at least one threshold required"));
        }
        if self.thresholds.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::config("thresholds", "thresholds must be positive"));
        }
        if self.thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("thresholds", "thresholds must strictly increase"));
        }
        if !(self.tp_threshold > 0.0 && self.tp_threshold.is_finite()) {
            return Err(Error::config("tp_threshold", "must be positive"));
        }
        let n = &self.normalizers;
        if [n.ate, n.ase, n.aoe, n.ave].iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::config("normalizers", "all normalizers must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEval {
    pub class_id: u16,
    /// Annotations of this class in the band, over all frames.
    pub support: usize,
    pub detections: usize,
    /// Mean AP over thresholds.
    pub ap: f64,
    pub ap_per_threshold: Vec<f64>,
    pub tp_per_threshold: Vec<usize>,
    pub ate: f64,
    pub ase: f64,
    pub aoe: f64,
    pub ave: f64,
    pub cds: f64,
    pub nds: f64,
    /// No detection matched at the TP threshold; errors sit at their caps.
    pub no_tp_matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandAggregate {
    pub classes: usize,
    pub ap: f64,
    pub ate: f64,
    pub ase: f64,
    pub aoe: f64,
    pub ave: f64,
    pub cds: f64,
    pub nds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub band: RangeBand,
    pub classes: Vec<ClassEval>,
    /// Classes seen somewhere in the data with no annotation in this band.
    pub excluded_classes: Vec<u16>,
    /// Mean over supported classes; `None` when the band has no annotations.
    pub aggregate: Option<BandAggregate>,
}

impl BandReport {
    pub fn class(&self, class_id: u16) -> Option<&ClassEval> {
        self.classes.iter().find(|c| c.class_id == class_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub bands: Vec<BandReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyStats>,
}

impl CohortReport {
    pub fn band(&self, band: &RangeBand) -> Option<&BandReport> {
        self.bands.iter().find(|b| b.band == *band)
    }
}

fn by_class(boxes: &[Box3D], class_id: u16) -> Vec<Box3D> {
    boxes.iter().filter(|b| b.class_id == class_id).copied().collect()
}

fn evaluate_class(
    dets: &[Vec<Box3D>],
    gts: &[Vec<Box3D>],
    class_id: u16,
    spec: &MatchSpec,
) -> ClassEval {
    let dets: Vec<Vec<Box3D>> = dets.iter().map(|d| by_class(d, class_id)).collect();
    let gts: Vec<Vec<Box3D>> = gts.iter().map(|g| by_class(g, class_id)).collect();
    let support: usize = gts.iter().map(Vec::len).sum();
    let n_dets: usize = dets.iter().map(Vec::len).sum();

    let mut ap_per_threshold = Vec::with_capacity(spec.thresholds.len());
    let mut tp_per_threshold = Vec::with_capacity(spec.thresholds.len());
    for &thresh in &spec.thresholds {
        let mut scored = Vec::with_capacity(n_dets);
        let mut tp = 0;
        for (d, g) in dets.iter().zip(&gts) {
            let m = match_frame(d, g, thresh);
            tp += m.tp_count();
            scored.extend(d.iter().zip(&m.tp).map(|(b, &is_tp)| (b.score, is_tp)));
        }
        ap_per_threshold.push(average_precision(&scored, support, spec.interpolation).unwrap_or(0.0));
        tp_per_threshold.push(tp);
    }
    let ap = ap_per_threshold.iter().sum::<f64>() / ap_per_threshold.len() as f64;

    let mut pairs = Vec::new();
    for (d, g) in dets.iter().zip(&gts) {
        let m = match_frame(d, g, spec.tp_threshold);
        pairs.extend(m.pairs.iter().map(|p| (d[p.det], g[p.gt])));
    }
    let errors = tp_errors(&pairs, &spec.normalizers);

    ClassEval {
        class_id,
        support,
        detections: n_dets,
        ap,
        ap_per_threshold,
        tp_per_threshold,
        ate: errors.ate,
        ase: errors.ase,
        aoe: errors.aoe,
        ave: errors.ave,
        cds: cds(ap, &errors, &spec.normalizers),
        nds: nds(ap, &errors, &spec.normalizers),
        no_tp_matches: errors.no_matches(),
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn evaluate_band(
    dets: &[Vec<Box3D>],
    gts: &[Vec<Box3D>],
    band: RangeBand,
    classes: &BTreeSet<u16>,
    spec: &MatchSpec,
) -> BandReport {
    let dets: Vec<Vec<Box3D>> = dets
        .iter()
        .map(|d| filter_detections_by_band(d, &band, spec.range_mode))
        .collect();
    let gts: Vec<Vec<Box3D>> = gts
        .iter()
        .map(|g| filter_detections_by_band(g, &band, spec.range_mode))
        .collect();

    let mut evals = Vec::new();
    let mut excluded = Vec::new();
    for &c in classes {
        let e = evaluate_class(&dets, &gts, c, spec);
        if e.support == 0 {
            excluded.push(c);
        } else {
            evals.push(e);
        }
    }
    let aggregate = (!evals.is_empty()).then(|| BandAggregate {
        classes: evals.len(),
        ap: mean(evals.iter().map(|e| e.ap)),
        ate: mean(evals.iter().map(|e| e.ate)),
        ase: mean(evals.iter().map(|e| e.ase)),
        aoe: mean(evals.iter().map(|e| e.aoe)),
        ave: mean(evals.iter().map(|e| e.ave)),
        cds: mean(evals.iter().map(|e| e.cds)),
        nds: mean(evals.iter().map(|e| e.nds)),
    });
    BandReport {
        band,
        classes: evals,
        excluded_classes: excluded,
        aggregate,
    }
}

/// Evaluates detections against annotations per range band.
///
/// Both detections and annotations are filtered to a band before matching, so
/// nothing matches across a band boundary. The span of all given bands
/// (`[min inner, max outer)`) is appended as a final full-range band unless a
/// given band already equals it.
pub fn evaluate_cohorts(
    dets_per_frame: &[Vec<Box3D>],
    gts_per_frame: &[Vec<Box3D>],
    bands: &[RangeBand],
    spec: &MatchSpec,
) -> Result<CohortReport> {
    spec.validate()?;
    if dets_per_frame.len() != gts_per_frame.len() {
        return Err(Error::InvalidArgument(format!(
            "{} detection frames vs {} annotation frames",
            dets_per_frame.len(),
            gts_per_frame.len()
        )));
    }
    if bands.is_empty() {
        return Err(Error::InvalidArgument("at least one band required".into()));
    }
    let classes: BTreeSet<u16> = dets_per_frame
        .iter()
        .chain(gts_per_frame)
        .flatten()
        .map(|b| b.class_id)
        .collect();

    let mut all_bands = bands.to_vec();
    let lo = bands.iter().map(|b| b.inner()).fold(f64::INFINITY, f64::min);
    let hi = bands.iter().map(|b| b.outer()).fold(0.0, f64::max);
    let union = RangeBand::new(lo, hi)?;
    if !all_bands.contains(&union) {
        all_bands.push(union);
    }

    Ok(CohortReport {
        bands: all_bands
            .into_iter()
            .map(|b| evaluate_band(dets_per_frame, gts_per_frame, b, &classes, spec))
            .collect(),
        latency: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64, y: f64, class_id: u16, score: f64) -> Box3D {
        Box3D {
            center: [x, y, 0.0],
            dims: [4.0, 2.0, 1.5],
            yaw: 0.0,
            velocity: Some([0.0, 0.0]),
            class_id,
            score,
        }
    }

    fn band(a: f64, c: f64) -> RangeBand {
        RangeBand::new(a, c).unwrap()
    }

    #[test]
    fn perfect_detections_score_one() {
        let gts = vec![vec![b(10.0, 0.0, 0, 1.0), b(70.0, 5.0, 1, 1.0)], vec![b(120.0, 0.0, 0, 1.0)]];
        let dets = gts.clone();
        let r = evaluate_cohorts(&dets, &gts, &[band(0.0, 50.0), band(50.0, 100.0), band(100.0, 150.0)], &MatchSpec::default())
            .unwrap();
        assert_eq!(r.bands.len(), 4);
        for br in &r.bands {
            let agg = br.aggregate.as_ref().unwrap();
            assert_eq!(agg.ap, 1.0);
            assert_eq!(agg.cds, 1.0);
        }
        assert_eq!(r.bands[0].excluded_classes, vec![1]);
    }

    #[test]
    fn single_infinite_band_equals_whole_scene() {
        let gts = vec![vec![b(10.0, 0.0, 0, 1.0), b(300.0, 0.0, 0, 1.0)]];
        let dets = vec![vec![b(10.5, 0.0, 0, 0.9), b(305.0, 0.0, 0, 0.8)]];
        let r = evaluate_cohorts(&dets, &gts, &[RangeBand::everything()], &MatchSpec::default()).unwrap();
        assert_eq!(r.bands.len(), 1);
        let c = r.bands[0].class(0).unwrap();
        assert_eq!(c.support, 2);
        assert_eq!(c.tp_per_threshold, vec![1, 1, 1, 1]);
    }

    #[test]
    fn cross_band_matches_impossible() {
        let gts = vec![vec![b(49.5, 0.0, 0, 1.0)]];
        let dets = vec![vec![b(50.5, 0.0, 0, 0.9)]];
        let r = evaluate_cohorts(&dets, &gts, &[band(0.0, 50.0), band(50.0, 100.0)], &MatchSpec::default()).unwrap();
        assert_eq!(r.bands[0].class(0).unwrap().tp_per_threshold, vec![0, 0, 0, 0]);
        assert!(r.bands[1].aggregate.is_none());
        // the union band sees both and matches at 1 m and above
        assert_eq!(r.bands[2].class(0).unwrap().tp_per_threshold, vec![0, 1, 1, 1]);
    }

    #[test]
    fn spec_validation() {
        let mut s = MatchSpec {
            thresholds: vec![1.0, 0.5],
            ..MatchSpec::default()
        };
        assert!(s.validate().is_err());
        s.thresholds = vec![];
        assert!(s.validate().is_err());
        assert!(evaluate_cohorts(&[vec![]], &[], &[band(0.0, 1.0)], &MatchSpec::default()).is_err());
    }
}
