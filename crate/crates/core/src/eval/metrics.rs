use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geometry::{yaw_difference, Box3D};

/// Caps that map each true-positive error onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorNormalizers {
    /// meters
    pub ate: f64,
    pub ase: f64,
    /// radians
    pub aoe: f64,
    /// m/s
    pub ave: f64,
}

impl Default for ErrorNormalizers {
    fn default() -> Self {
        ErrorNormalizers {
            ate: 2.0,
            ase: 1.0,
            aoe: PI,
            ave: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpErrors {
    pub ate: f64,
    pub ase: f64,
    pub aoe: f64,
    pub ave: f64,
    pub matches: usize,
}

impl TpErrors {
    /// Errors reported when nothing matched: every error at its cap.
    pub fn worst(norm: &ErrorNormalizers) -> Self {
        TpErrors {
            ate: norm.ate,
            ase: norm.ase,
            aoe: norm.aoe,
            ave: norm.ave,
            matches: 0,
        }
    }

    pub fn no_matches(&self) -> bool {
        self.matches == 0
    }
}

/// `1 - IoU` after aligning centers and headings: depends on dimensions only.
///
/// Equals `1 - ∏ min/max` when one box nests inside the other.
pub fn aligned_scale_error(det: &Box3D, gt: &Box3D) -> f64 {
    let inter: f64 = det.dims.iter().zip(&gt.dims).map(|(a, b)| a.min(*b)).product();
    let vd: f64 = det.dims.iter().product();
    let vg: f64 = gt.dims.iter().product();
    1.0 - inter / (vd + vg - inter)
}

/// Mean translation, scale, orientation and velocity errors over matched `(det, gt)` pairs.
pub fn tp_errors(pairs: &[(Box3D, Box3D)], norm: &ErrorNormalizers) -> TpErrors {
    if pairs.is_empty() {
        return TpErrors::worst(norm);
    }
    let n = pairs.len() as f64;
    let (mut ate, mut ase, mut aoe, mut ave) = (0.0, 0.0, 0.0, 0.0);
    for (d, g) in pairs {
        ate += d.bev_distance(g);
        ase += aligned_scale_error(d, g);
        aoe += yaw_difference(d.yaw, g.yaw);
        let dv = d.velocity.unwrap_or([0.0, 0.0]);
        let gv = g.velocity.unwrap_or([0.0, 0.0]);
        ave += (dv[0] - gv[0]).hypot(dv[1] - gv[1]);
    }
    TpErrors {
        ate: ate / n,
        ase: ase / n,
        aoe: aoe / n,
        ave: ave / n,
        matches: pairs.len(),
    }
}

fn complement(err: f64, cap: f64) -> f64 {
    1.0 - (err.min(cap) / cap)
}

/// Composite detection score: AP times the mean complement of the normalized ATE, ASE and AOE.
pub fn cds(ap: f64, e: &TpErrors, norm: &ErrorNormalizers) -> f64 {
    ap * (complement(e.ate, norm.ate) + complement(e.ase, norm.ase) + complement(e.aoe, norm.aoe)) / 3.0
}

/// NDS-style score: `(5·mAP + Σ complements of ATE, ASE, AOE, AVE) / 10`.
pub fn nds(map: f64, e: &TpErrors, norm: &ErrorNormalizers) -> f64 {
    let tp = complement(e.ate, norm.ate)
        + complement(e.ase, norm.ase)
        + complement(e.aoe, norm.aoe)
        + complement(e.ave, norm.ave);
    (5.0 * map + tp) / 10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositeMetric {
    Cds,
    Nds,
}

pub fn composite_scores(ap: f64, errors: &TpErrors, metric: CompositeMetric, norm: &ErrorNormalizers) -> f64 {
    match metric {
        CompositeMetric::Cds => cds(ap, errors, norm),
        CompositeMetric::Nds => nds(ap, errors, norm),
    }
}
