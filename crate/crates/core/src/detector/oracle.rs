//! Synthetic detector that perturbs ground truth according to a range expert's knobs.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use super::{GeneralizationMode, RangeExpertConfig, ScoreCalibration};
use crate::geometry::{normalize_yaw, Box3D, PointCloud};
use crate::range::{box_range, RangeMode};

const COLLAPSE_SUPPRESSION: f64 = 0.98;
const INDEX_CELL: f64 = 2.0;
const FP_DIMS: [f64; 3] = [4.5, 2.0, 1.6];

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutput {
    pub detections: Vec<Box3D>,
    pub beyond_annotation_range: bool,
}

/// Derives an independent RNG seed per (seed, frame, lane, index).
pub(crate) fn stream_seed(seed: u64, frame: u64, lane: u64, index: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut h = splitmix(seed);
    for v in [frame, lane, index] {
        h = splitmix(h ^ v);
    }
    h
}

struct BevIndex<'a> {
    cloud: &'a PointCloud,
    cells: HashMap<(i64, i64), Vec<u32>>,
}

impl<'a> BevIndex<'a> {
    fn new(cloud: &'a PointCloud) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in cloud.iter().enumerate() {
            cells.entry(Self::key(p.x, p.y)).or_default().push(i as u32);
        }
        BevIndex { cloud, cells }
    }

    fn key(x: f64, y: f64) -> (i64, i64) {
        ((x / INDEX_CELL).floor() as i64, (y / INDEX_CELL).floor() as i64)
    }

    fn count_in(&self, b: &Box3D) -> usize {
        let (x0, y0, x1, y1) = b.bev_aabb();
        let (i0, j0) = Self::key(x0, y0);
        let (i1, j1) = Self::key(x1, y1);
        let mut n = 0;
        for i in i0..=i1 {
            for j in j0..=j1 {
                if let Some(idx) = self.cells.get(&(i, j)) {
                    n += idx
                        .iter()
                        .filter(|&&k| {
                            let p = &self.cloud.points[k as usize];
                            b.contains_bev(p.x, p.y)
                        })
                        .count();
                }
            }
        }
        n
    }
}

/// Number of cloud points inside the BEV footprint of `b`.
pub fn points_on_object(b: &Box3D, cloud: &PointCloud) -> usize {
    cloud.iter().filter(|p| b.contains_bev(p.x, p.y)).count()
}

fn detection_probability(cfg: &RangeExpertConfig, points: usize) -> f64 {
    let o = &cfg.oracle;
    let density = if o.density_floor > 0.0 {
        (points as f64 / o.density_floor).min(1.0)
    } else {
        1.0
    };
    o.base_recall * density.powf(o.recall_decay)
}

fn translation_sigma(cfg: &RangeExpertConfig, range: f64) -> f64 {
    let o = &cfg.oracle;
    let mut sigma = o.sigma_t0 + o.sigma_t_slope * range + o.sigma_t_voxel / cfg.voxel_reciprocal;
    if matches!(
        cfg.generalization_mode,
        GeneralizationMode::LocalCalibrated | GeneralizationMode::GlobalOverconfident
    ) {
        sigma += o.offrange_sigma_slope * (range - cfg.train_range).max(0.0);
    }
    sigma
}

fn score(cfg: &RangeExpertConfig, p_detect: f64, range: f64, u: f64) -> f64 {
    let calibrated = || (p_detect * (1.0 - range / (2.0 * cfg.infer_range))).clamp(0.0, 1.0);
    match cfg.oracle.score_calibration {
        ScoreCalibration::Calibrated => calibrated(),
        ScoreCalibration::OverconfidentFar => 0.5 + 0.5 * u,
        ScoreCalibration::ZeroOutsideTrain => {
            if range > cfg.train_range {
                0.05 * u
            } else {
                calibrated()
            }
        }
    }
}

/// Emulates a range expert on one frame.
///
/// Every annotated object whose center lies within the inference range is
/// detected with a probability that falls off when it carries fewer points
/// than the density floor, then perturbed with range-dependent Gaussian noise.
/// Poisson false positives are scattered over the inference disk. Output is a
/// pure function of `(config, truth, cloud, frame_index)`; each object draws
/// from its own RNG stream so adding or removing other objects does not
/// perturb it.
pub fn oracle_detect(
    cfg: &RangeExpertConfig,
    truth: &[Box3D],
    cloud: &PointCloud,
    frame_index: u64,
    annotation_range: f64,
) -> OracleOutput {
    let o = &cfg.oracle;
    let r2 = cfg.infer_range;
    let collapse =
        cfg.generalization_mode == GeneralizationMode::AbsolutePeCollapse && r2 != cfg.train_range;
    let index = BevIndex::new(cloud);
    let mut detections = Vec::new();

    for (k, gt) in truth.iter().enumerate() {
        let range = box_range(gt, RangeMode::BevL2);
        if range >= r2 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(o.seed, frame_index, 0, k as u64));
        let u_detect: f64 = rng.gen();
        let nx: f64 = StandardNormal.sample(&mut rng);
        let ny: f64 = StandardNormal.sample(&mut rng);
        let nyaw: f64 = StandardNormal.sample(&mut rng);
        let u_score: f64 = rng.gen();
        let u_suppress: f64 = rng.gen();

        let p_detect = detection_probability(cfg, index.count_in(gt));
        if u_detect >= p_detect || (collapse && u_suppress < COLLAPSE_SUPPRESSION) {
            continue;
        }
        let sigma = translation_sigma(cfg, range);
        let mut det = *gt;
        det.center[0] += sigma * nx;
        det.center[1] += sigma * ny;
        if o.yaw_sigma > 0.0 {
            det.yaw = normalize_yaw(gt.yaw + o.yaw_sigma * nyaw);
        }
        det.score = score(cfg, p_detect, range, u_score);
        detections.push(det);
    }

    if o.fp_rate > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(o.seed, frame_index, 1, 0));
        let n = Poisson::new(o.fp_rate)
            .map(|d| d.sample(&mut rng) as usize)
            .unwrap_or(0);
        let mut classes: Vec<u16> = truth.iter().map(|b| b.class_id).collect();
        classes.sort_unstable();
        classes.dedup();
        for _ in 0..n {
            let radius = r2 * rng.gen::<f64>().sqrt();
            let theta = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let class_id = if classes.is_empty() {
                0
            } else {
                classes[rng.gen_range(0..classes.len())]
            };
            let score = 0.3 * rng.gen::<f64>();
            let u_suppress: f64 = rng.gen();
            if collapse && u_suppress < COLLAPSE_SUPPRESSION {
                continue;
            }
            detections.push(Box3D {
                center: [radius * theta.cos(), radius * theta.sin(), 0.5 * FP_DIMS[2]],
                dims: FP_DIMS,
                yaw: normalize_yaw(yaw),
                velocity: Some([0.0, 0.0]),
                class_id,
                score,
            });
        }
    }

    OracleOutput {
        detections,
        beyond_annotation_range: r2 > annotation_range,
    }
}
