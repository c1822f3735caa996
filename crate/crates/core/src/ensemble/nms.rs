//! Center-distance non-maximum suppression in BEV.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Box3D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmsMode {
    /// Standard greedy association by descending score.
    #[default]
    Greedy,
    /// Keep local score maxima on a BEV raster with cell `dist_thresh / 2`.
    Maxpool,
}

/// Descending score, ascending input index on ties.
pub(crate) fn score_order(dets: &[Box3D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

pub fn greedy_nms(dets: &[Box3D], dist_thresh: f64, mode: NmsMode) -> Result<Vec<Box3D>> {
    if !(dist_thresh > 0.0 && dist_thresh.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "nms distance threshold must be positive, got {dist_thresh}"
        )));
    }
    let order = score_order(dets);
    let keep: Vec<usize> = match mode {
        NmsMode::Greedy => {
            let mut accepted: Vec<usize> = Vec::new();
            for &i in &order {
                let clear = accepted.iter().all(|&j| {
                    dets[j].class_id != dets[i].class_id
                        || dets[j].bev_distance(&dets[i]) >= dist_thresh
                });
                if clear {
                    accepted.push(i);
                }
            }
            accepted
        }
        NmsMode::Maxpool => {
            let cell = dist_thresh / 2.0;
            let key = |b: &Box3D| {
                (
                    b.class_id,
                    (b.center[0] / cell).floor() as i64,
                    (b.center[1] / cell).floor() as i64,
                )
            };
            let mut cells: HashMap<(u16, i64, i64), Vec<usize>> = HashMap::new();
            for (i, b) in dets.iter().enumerate() {
                cells.entry(key(b)).or_default().push(i);
            }
            // rank in the global order doubles as the tie-break
            let mut rank = vec![0usize; dets.len()];
            for (r, &i) in order.iter().enumerate() {
                rank[i] = r;
            }
            order
                .iter()
                .copied()
                .filter(|&i| {
                    let (c, x, y) = key(&dets[i]);
                    (-1..=1).all(|dx| {
                        (-1..=1).all(|dy| {
                            cells
                                .get(&(c, x + dx, y + dy))
                                .is_none_or(|v| v.iter().all(|&j| rank[j] >= rank[i]))
                        })
                    })
                })
                .collect()
        }
    };
    Ok(keep.into_iter().map(|i| dets[i]).collect())
}
