//! Slow, independent reference implementations used as test oracles.
//! Shared by the core property tests and the acceptance suite.

#![allow(dead_code)]

use rangeforge_core::geometry::Box3D;

/// Indices by descending score, lowest index first on ties (selection sort).
pub fn ranked(scores: &[f64]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..scores.len()).collect();
    let mut out = Vec::with_capacity(left.len());
    while !left.is_empty() {
        let mut best = 0;
        for k in 1..left.len() {
            if scores[left[k]] > scores[left[best]] {
                best = k;
            }
        }
        out.push(left.remove(best));
    }
    out
}

fn bev(a: &Box3D, b: &Box3D) -> f64 {
    ((a.center[0] - b.center[0]).powi(2) + (a.center[1] - b.center[1]).powi(2)).sqrt()
}

/// Per-detection keys in rank order, with the assignment that produced them.
type Scored = (Vec<(u8, f64, usize)>, Vec<Option<usize>>);

/// Greedy matching recovered by exhaustive search.
///
/// Every partial injection from detections to same-class annotations within
/// `thresh` is enumerated. Visiting detections by rank, the greedy rule picks
/// the assignment whose per-detection key `(unmatched?, distance, gt index)`
/// sequence is lexicographically smallest.
pub fn match_exhaustive(dets: &[Box3D], gts: &[Box3D], thresh: f64) -> Vec<Option<usize>> {
    let order = ranked(&dets.iter().map(|d| d.score).collect::<Vec<_>>());
    let mut best: Option<Scored> = None;
    let mut current = vec![None; dets.len()];
    let mut used = vec![false; gts.len()];

    fn key(order: &[usize], assign: &[Option<usize>], dets: &[Box3D], gts: &[Box3D]) -> Vec<(u8, f64, usize)> {
        order
            .iter()
            .map(|&d| match assign[d] {
                Some(g) => (0, bev(&dets[d], &gts[g]), g),
                None => (1, 0.0, 0),
            })
            .collect()
    }

    fn less(a: &[(u8, f64, usize)], b: &[(u8, f64, usize)]) -> bool {
        for (x, y) in a.iter().zip(b) {
            if x.0 != y.0 {
                return x.0 < y.0;
            }
            if x.1 != y.1 {
                return x.1 < y.1;
            }
            if x.2 != y.2 {
                return x.2 < y.2;
            }
        }
        false
    }

    #[allow(clippy::too_many_arguments)]
    fn rec(
        d: usize,
        dets: &[Box3D],
        gts: &[Box3D],
        thresh: f64,
        order: &[usize],
        current: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        best: &mut Option<Scored>,
    ) {
        if d == dets.len() {
            let k = key(order, current, dets, gts);
            if best.as_ref().is_none_or(|(bk, _)| less(&k, bk)) {
                *best = Some((k, current.clone()));
            }
            return;
        }
        current[d] = None;
        rec(d + 1, dets, gts, thresh, order, current, used, best);
        for g in 0..gts.len() {
            if !used[g] && gts[g].class_id == dets[d].class_id && bev(&dets[d], &gts[g]) <= thresh {
                used[g] = true;
                current[d] = Some(g);
                rec(d + 1, dets, gts, thresh, order, current, used, best);
                current[d] = None;
                used[g] = false;
            }
        }
    }

    rec(0, dets, gts, thresh, &order, &mut current, &mut used, &mut best);
    best.map(|(_, a)| a).unwrap_or_default()
}

/// 101-point interpolated AP by definition, with exact integer recall tests.
pub fn ap101(ranked_tp: &[bool], gt_count: usize) -> f64 {
    let mut tp = 0usize;
    let mut points = Vec::new();
    for (k, &hit) in ranked_tp.iter().enumerate() {
        tp += hit as usize;
        points.push((tp, k + 1));
    }
    let mut sum = 0.0;
    for r in 0..=100usize {
        let mut p = 0.0f64;
        for &(tp, n) in &points {
            if 100 * tp >= r * gt_count {
                p = p.max(tp as f64 / n as f64);
            }
        }
        sum += p;
    }
    sum / 101.0
}

/// Aligned 3D IoU computed from overlapping centered intervals.
pub fn aligned_iou(a: [f64; 3], b: [f64; 3]) -> f64 {
    let mut inter = 1.0;
    for i in 0..3 {
        let lo = (-a[i] / 2.0).max(-b[i] / 2.0);
        let hi = (a[i] / 2.0).min(b[i] / 2.0);
        inter *= (hi - lo).max(0.0);
    }
    inter / (a[0] * a[1] * a[2] + b[0] * b[1] * b[2] - inter)
}

pub fn yaw_gap(a: f64, b: f64) -> f64 {
    let d = a - b;
    d.sin().atan2(d.cos()).abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReference {
    pub ap: f64,
    pub ap_per_threshold: Vec<f64>,
    pub ate: f64,
    pub ase: f64,
    pub aoe: f64,
    pub cds: f64,
}

/// Per-class AP (mean over thresholds), TP errors at `tp_threshold` and CDS
/// for a single frame. Normalizers are 2 m, 1 and π.
pub fn class_reference(
    dets: &[Box3D],
    gts: &[Box3D],
    class_id: u16,
    thresholds: &[f64],
    tp_threshold: f64,
) -> Option<ClassReference> {
    let dets: Vec<Box3D> = dets.iter().filter(|b| b.class_id == class_id).copied().collect();
    let gts: Vec<Box3D> = gts.iter().filter(|b| b.class_id == class_id).copied().collect();
    if gts.is_empty() {
        return None;
    }
    let order = ranked(&dets.iter().map(|d| d.score).collect::<Vec<_>>());
    let ap_per_threshold: Vec<f64> = thresholds
        .iter()
        .map(|&t| {
            let m = match_exhaustive(&dets, &gts, t);
            let hits: Vec<bool> = order.iter().map(|&d| m[d].is_some()).collect();
            ap101(&hits, gts.len())
        })
        .collect();
    let ap = ap_per_threshold.iter().sum::<f64>() / thresholds.len() as f64;

    let m = match_exhaustive(&dets, &gts, tp_threshold);
    let pairs: Vec<(usize, usize)> = m
        .iter()
        .enumerate()
        .filter_map(|(d, g)| g.map(|g| (d, g)))
        .collect();
    let (ate, ase, aoe) = if pairs.is_empty() {
        (2.0, 1.0, std::f64::consts::PI)
    } else {
        let n = pairs.len() as f64;
        let mut s = (0.0, 0.0, 0.0);
        for &(d, g) in &pairs {
            s.0 += bev(&dets[d], &gts[g]);
            s.1 += 1.0 - aligned_iou(dets[d].dims, gts[g].dims);
            s.2 += yaw_gap(dets[d].yaw, gts[g].yaw);
        }
        (s.0 / n, s.1 / n, s.2 / n)
    };
    let c = |e: f64, cap: f64| 1.0 - (e / cap).min(1.0);
    let cds = ap * (c(ate, 2.0) + c(ase, 1.0) + c(aoe, std::f64::consts::PI)) / 3.0;
    Some(ClassReference {
        ap,
        ap_per_threshold,
        ate,
        ase,
        aoe,
        cds,
    })
}

/// O(n²) NMS: repeatedly keep the best remaining box and drop its same-class
/// neighbours closer than `thresh`.
pub fn nms_reference(dets: &[Box3D], thresh: f64) -> Vec<Box3D> {
    let mut alive: Vec<usize> = (0..dets.len()).collect();
    let mut kept = Vec::new();
    while !alive.is_empty() {
        let mut best = 0;
        for k in 1..alive.len() {
            let (a, b) = (&dets[alive[k]], &dets[alive[best]]);
            if a.score > b.score || (a.score == b.score && alive[k] < alive[best]) {
                best = k;
            }
        }
        let top = alive.remove(best);
        kept.push(dets[top]);
        alive.retain(|&i| dets[i].class_id != dets[top].class_id || bev(&dets[i], &dets[top]) >= thresh);
    }
    kept
}
