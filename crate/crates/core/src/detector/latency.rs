//! Per-stage latency model for pillar/voxel detectors.
//!
//! Point processing scales with occupied pillars; backbone and neck scale
//! with dense grid cells (plus a fixed per-stage overhead); head and post
//! processing are constant per architecture.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::range::{grid_side, SparsePillarGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyParams {
    /// ms per 1000 occupied pillars
    pub c_point_per_kvoxel: f64,
    /// ms per 10^6 grid cells
    pub c_backbone_per_mcell: f64,
    /// ms per 10^6 grid cells
    pub c_neck_per_mcell: f64,
    /// fixed backbone overhead, ms; may be negative when fitted (predictions clamp at 0)
    #[serde(default)]
    pub c_backbone_base: f64,
    #[serde(default)]
    pub c_neck_base: f64,
    pub c_head: f64,
    pub c_post: f64,
}

impl LatencyParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.c_point_per_kvoxel,
            self.c_backbone_per_mcell,
            self.c_neck_per_mcell,
            self.c_backbone_base,
            self.c_neck_base,
            self.c_head,
            self.c_post,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latency params"));
        }
        let rates = [
            self.c_point_per_kvoxel,
            self.c_backbone_per_mcell,
            self.c_neck_per_mcell,
            self.c_head,
            self.c_post,
        ];
        if rates.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument(
                "latency coefficients must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Modeled milliseconds per detector stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub point_proc: f64,
    pub backbone: f64,
    pub neck: f64,
    pub head: f64,
    pub post_proc: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.point_proc + self.backbone + self.neck + self.head + self.post_proc
    }

    /// Everything except post processing.
    pub fn inference(&self) -> f64 {
        self.total() - self.post_proc
    }

    pub fn as_array(&self) -> [f64; 5] {
        [
            self.point_proc,
            self.backbone,
            self.neck,
            self.head,
            self.post_proc,
        ]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        StageTimings {
            point_proc: a[0],
            backbone: a[1],
            neck: a[2],
            head: a[3],
            post_proc: a[4],
        }
    }
}

impl Add for StageTimings {
    type Output = StageTimings;

    fn add(self, o: StageTimings) -> StageTimings {
        StageTimings {
            point_proc: self.point_proc + o.point_proc,
            backbone: self.backbone + o.backbone,
            neck: self.neck + o.neck,
            head: self.head + o.head,
            post_proc: self.post_proc + o.post_proc,
        }
    }
}

impl AddAssign for StageTimings {
    fn add_assign(&mut self, o: StageTimings) {
        *self = *self + o;
    }
}

pub fn predict_stages(params: &LatencyParams, side: usize, occupied: usize) -> StageTimings {
    let mcells = (side as f64) * (side as f64) / 1e6;
    StageTimings {
        point_proc: params.c_point_per_kvoxel * occupied as f64 / 1000.0,
        backbone: (params.c_backbone_base + params.c_backbone_per_mcell * mcells).max(0.0),
        neck: (params.c_neck_base + params.c_neck_per_mcell * mcells).max(0.0),
        head: params.c_head,
        post_proc: params.c_post,
    }
}

pub fn predict_latency(params: &LatencyParams, grid: &SparsePillarGrid) -> StageTimings {
    predict_stages(params, grid.side(), grid.occupied_count())
}

/// One measured configuration used for calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredRow {
    pub range: f64,
    pub voxel_reciprocal: f64,
    /// Occupied pillars during measurement; rows without it do not inform the point-proc fit.
    #[serde(default)]
    pub occupied: Option<u64>,
    pub timings: StageTimings,
}

impl MeasuredRow {
    pub fn side(&self) -> usize {
        grid_side(self.range, self.voxel_reciprocal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub params: LatencyParams,
    /// `predicted / measured - 1` per row, stage order as [`StageTimings::as_array`].
    /// `None` where the measurement is zero or the stage was not fitted.
    pub relative_residuals: Vec<[Option<f64>; 5]>,
    pub point_proc_fitted: bool,
}

fn relative_weight(y: f64) -> f64 {
    if y > 0.0 {
        1.0 / y
    } else {
        1.0
    }
}

/// Weighted least squares for `y ≈ a + b·x` with weights on the residuals.
fn fit_affine(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let (mut s_ww, mut s_wx, mut s_wxx, mut s_wy, mut s_wxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let w = relative_weight(y).powi(2);
        s_ww += w;
        s_wx += w * x;
        s_wxx += w * x * x;
        s_wy += w * y;
        s_wxy += w * x * y;
    }
    let det = s_ww * s_wxx - s_wx * s_wx;
    if det.abs() <= 1e-12 * s_ww * s_wxx.max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateFit("grid areas do not vary".into()));
    }
    let b = (s_ww * s_wxy - s_wx * s_wy) / det;
    let a = (s_wy - b * s_wx) / s_ww;
    Ok((a, b))
}

fn fit_proportional(xs: &[f64], ys: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let w = relative_weight(y).powi(2);
        num += w * x * y;
        den += w * x * x;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn fit_constant(ys: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &y in ys {
        let w = relative_weight(y).powi(2);
        num += w * y;
        den += w;
    }
    num / den
}

/// Fits [`LatencyParams`] to measured rows by least squares on relative residuals.
///
/// Needs at least two distinct grid areas. Backbone and neck get an affine fit
/// in grid cells, point processing a proportional fit in occupied pillars,
/// head and post processing a constant.
pub fn calibrate_latency(rows: &[MeasuredRow]) -> Result<Calibration> {
    if rows.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "need at least 2 rows, got {}",
            rows.len()
        )));
    }
    for r in rows {
        if !(r.range > 0.0 && r.voxel_reciprocal > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "row range {} / voxel reciprocal {} must be positive",
                r.range, r.voxel_reciprocal
            )));
        }
        if r.timings.as_array().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "measured timings must be finite and non-negative".into(),
            ));
        }
    }
    let mcells: Vec<f64> = rows
        .iter()
        .map(|r| (r.side() as f64).powi(2) / 1e6)
        .collect();
    if mcells.iter().all(|&m| m == mcells[0]) {
        return Err(Error::DegenerateFit("all rows share one grid area".into()));
    }
    let col = |f: fn(&StageTimings) -> f64| rows.iter().map(|r| f(&r.timings)).collect::<Vec<_>>();

    let (c_backbone_base, c_backbone_per_mcell) = fit_affine(&mcells, &col(|t| t.backbone))?;
    let (c_neck_base, c_neck_per_mcell) = fit_affine(&mcells, &col(|t| t.neck))?;

    let with_occ: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.occupied.map(|o| (o as f64 / 1000.0, r.timings.point_proc)))
        .collect();
    let point_proc_fitted = !with_occ.is_empty();
    let c_point_per_kvoxel = if point_proc_fitted {
        let (ks, ys): (Vec<f64>, Vec<f64>) = with_occ.into_iter().unzip();
        fit_proportional(&ks, &ys).max(0.0)
    } else {
        0.0
    };

    let params = LatencyParams {
        c_point_per_kvoxel,
        c_backbone_per_mcell: c_backbone_per_mcell.max(0.0),
        c_neck_per_mcell: c_neck_per_mcell.max(0.0),
        c_backbone_base,
        c_neck_base,
        c_head: fit_constant(&col(|t| t.head)),
        c_post: fit_constant(&col(|t| t.post_proc)),
    };

    let relative_residuals = rows
        .iter()
        .map(|r| {
            let pred = predict_stages(&params, r.side(), r.occupied.unwrap_or(0) as usize).as_array();
            let meas = r.timings.as_array();
            let mut out = [None; 5];
            for k in 0..5 {
                if k == 0 && (!point_proc_fitted || r.occupied.is_none()) {
                    continue;
                }
                if meas[k] > 0.0 {
                    out[k] = Some(pred[k] / meas[k] - 1.0);
                }
            }
            out
        })
        .collect();

    Ok(Calibration {
        params,
        relative_residuals,
        point_proc_fitted,
    })
}
