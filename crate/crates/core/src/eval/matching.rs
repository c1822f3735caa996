use serde::{Deserialize, Serialize};

use crate::ensemble::score_order;
use crate::geometry::Box3D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub det: usize,
    pub gt: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameMatch {
    /// TP flag per input detection, in input order.
    pub tp: Vec<bool>,
    /// Matched pairs in the order they were made.
    pub pairs: Vec<MatchPair>,
}

impl FrameMatch {
    pub fn tp_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn unmatched_gts(&self, gt_count: usize) -> Vec<usize> {
        let mut matched = vec![false; gt_count];
        for p in &self.pairs {
            matched[p.gt] = true;
        }
        (0..gt_count).filter(|&g| !matched[g]).collect()
    }
}

/// Greedy center-distance matching for one frame.
///
/// Detections are visited by descending score (ties by input index); each
/// takes the nearest still-unmatched annotation of its class within `thresh`
/// meters in BEV (ties by annotation index).
pub fn match_frame(dets: &[Box3D], gts: &[Box3D], thresh: f64) -> FrameMatch {
    let mut taken = vec![false; gts.len()];
    let mut out = FrameMatch {
        tp: vec![false; dets.len()],
        pairs: Vec::new(),
    };
    for d in score_order(dets) {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(g, gt)| !taken[*g] && gt.class_id == dets[d].class_id)
            .map(|(g, gt)| (g, dets[d].bev_distance(gt)))
            .filter(|&(_, dist)| dist <= thresh)
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        if let Some((g, distance)) = best {
            taken[g] = true;
            out.tp[d] = true;
            out.pairs.push(MatchPair { det: d, gt: g, distance });
        }
    }
    out
}
