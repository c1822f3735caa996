//! Range bands, donut-hole cropping, pillar voxelization and radial occupancy.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{Box3D, Point, PointCloud};

/// How planar range is measured. `z` never participates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeMode {
    #[default]
    BevL2,
    BevLinf,
}

pub fn radial_range_xy(x: f64, y: f64, mode: RangeMode) -> f64 {
    match mode {
        RangeMode::BevL2 => x.hypot(y),
        RangeMode::BevLinf => x.abs().max(y.abs()),
    }
}

pub fn radial_range(p: &Point, mode: RangeMode) -> f64 {
    radial_range_xy(p.x, p.y, mode)
}

pub fn box_range(b: &Box3D, mode: RangeMode) -> f64 {
    radial_range_xy(b.center[0], b.center[1], mode)
}

/// Half-open annulus `[inner, outer)` in meters. `outer` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeBand {
    inner: f64,
    outer: f64,
}

impl RangeBand {
    pub fn new(inner: f64, outer: f64) -> Result<Self> {
        if !(inner.is_finite() && inner >= 0.0 && outer > inner) {
            return Err(Error::InvalidBand { inner, outer });
        }
        Ok(RangeBand { inner, outer })
    }

    /// `[0, ∞)`.
    pub fn everything() -> Self {
        RangeBand {
            inner: 0.0,
            outer: f64::INFINITY,
        }
    }

    pub fn inner(&self) -> f64 {
        self.inner
    }

    pub fn outer(&self) -> f64 {
        self.outer
    }

    pub fn contains(&self, range: f64) -> bool {
        self.inner <= range && range < self.outer
    }

    /// Short label such as `0-50` or `150-inf`.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for RangeBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.outer.is_infinite() {
            write!(f, "{}-inf", self.inner)
        } else {
            write!(f, "{}-{}", self.inner, self.outer)
        }
    }
}

/// Parses `inner:outer`; an empty or `inf` outer means unbounded.
impl FromStr for RangeBand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("band `{s}` is not `inner:outer`")))?;
        let inner: f64 = a
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad band inner `{a}`")))?;
        let b = b.trim();
        let outer = if b.is_empty() || b.eq_ignore_ascii_case("inf") {
            f64::INFINITY
        } else {
            b.parse()
                .map_err(|_| Error::InvalidArgument(format!("bad band outer `{b}`")))?
        };
        RangeBand::new(inner, outer)
    }
}

/// JSON form `[inner, outer]` with `null` for an unbounded outer edge.
impl Serialize for RangeBand {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let outer = self.outer.is_finite().then_some(self.outer);
        (self.inner, outer).serialize(s)
    }
}

impl<'de> Deserialize<'de> for RangeBand {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (inner, outer): (f64, Option<f64>) = Deserialize::deserialize(d)?;
        RangeBand::new(inner, outer.unwrap_or(f64::INFINITY)).map_err(serde::de::Error::custom)
    }
}

/// Keeps points whose planar range falls inside `band`, preserving order.
pub fn donut_crop(cloud: &PointCloud, band: &RangeBand, mode: RangeMode) -> PointCloud {
    cloud
        .iter()
        .filter(|p| band.contains(radial_range(p, mode)))
        .copied()
        .collect()
}

/// Keeps boxes whose center range falls inside `band`, preserving order.
pub fn filter_detections_by_band(dets: &[Box3D], band: &RangeBand, mode: RangeMode) -> Vec<Box3D> {
    dets.iter()
        .filter(|b| band.contains(box_range(b, mode)))
        .copied()
        .collect()
}

/// Grid side length in cells for half-extent `range` and `voxel_reciprocal` cells per meter.
pub fn grid_side(range: f64, voxel_reciprocal: f64) -> usize {
    (2.0 * range * voxel_reciprocal).round() as usize
}

/// Square BEV pillar grid over `[-r, r)²` storing point counts of occupied cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePillarGrid {
    range: f64,
    voxel_reciprocal: f64,
    side: usize,
    occupied: BTreeMap<(u32, u32), u32>,
}

impl SparsePillarGrid {
    pub fn empty(range: f64, voxel_reciprocal: f64) -> Result<Self> {
        if !(range > 0.0 && range.is_finite() && voxel_reciprocal > 0.0 && voxel_reciprocal.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "grid needs positive range and voxel reciprocal, got r={range} s={voxel_reciprocal}"
            )));
        }
        Ok(SparsePillarGrid {
            range,
            voxel_reciprocal,
            side: grid_side(range, voxel_reciprocal),
            occupied: BTreeMap::new(),
        })
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn voxel_reciprocal(&self) -> f64 {
        self.voxel_reciprocal
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn cell_count(&self) -> u64 {
        (self.side as u64) * (self.side as u64)
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.len()
    }

    pub fn point_count(&self) -> u64 {
        self.occupied.values().map(|&c| c as u64).sum()
    }

    pub fn occupied(&self) -> &BTreeMap<(u32, u32), u32> {
        &self.occupied
    }

    pub fn count_at(&self, i: u32, j: u32) -> u32 {
        self.occupied.get(&(i, j)).copied().unwrap_or(0)
    }

    /// Cell index holding `(x, y)`, or `None` when outside `[-r, r)²`.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(u32, u32)> {
        let i = ((x + self.range) * self.voxel_reciprocal).floor();
        let j = ((y + self.range) * self.voxel_reciprocal).floor();
        let side = self.side as f64;
        (i >= 0.0 && i < side && j >= 0.0 && j < side).then_some((i as u32, j as u32))
    }

    /// BEV coordinates of a cell center.
    pub fn cell_center(&self, i: u32, j: u32) -> (f64, f64) {
        let s = self.voxel_reciprocal;
        (
            (i as f64 + 0.5) / s - self.range,
            (j as f64 + 0.5) / s - self.range,
        )
    }

    pub fn insert(&mut self, x: f64, y: f64) -> bool {
        match self.cell_of(x, y) {
            Some(idx) => {
                *self.occupied.entry(idx).or_insert(0) += 1;
                true
            }
            None => false,
        }
    }

    /// Marks every cell occupied once. Test fixture helper.
    pub fn fill(&mut self) {
        let side = self.side as u32;
        for i in 0..side {
            for j in 0..side {
                self.occupied.insert((i, j), 1);
            }
        }
    }
}

/// Bins a cloud into pillars of edge `1/s` over `[-r, r)²`; out-of-bounds points are dropped.
pub fn voxelize(cloud: &PointCloud, r: f64, s: f64) -> Result<SparsePillarGrid> {
    let mut grid = SparsePillarGrid::empty(r, s)?;
    for p in cloud.iter() {
        grid.insert(p.x, p.y);
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingOccupancy {
    pub band: RangeBand,
    pub total_cells: u64,
    pub occupied_cells: u64,
    pub occupied_fraction: f64,
    /// Set when no cell center falls in this ring.
    pub empty: bool,
}

/// Occupied-cell fraction per annulus of width `ring_width`, using L2 range of cell centers.
pub fn occupancy_by_ring(grid: &SparsePillarGrid, ring_width: f64) -> Result<Vec<RingOccupancy>> {
    if !(ring_width > 0.0 && ring_width.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ring width must be positive, got {ring_width}"
        )));
    }
    let max_range = grid.range * std::f64::consts::SQRT_2;
    let n_rings = (max_range / ring_width).ceil().max(1.0) as usize;
    let mut totals = vec![0u64; n_rings];
    let mut occupied = vec![0u64; n_rings];
    let ring_of = |i: u32, j: u32| {
        let (x, y) = grid.cell_center(i, j);
        ((x.hypot(y) / ring_width).floor() as usize).min(n_rings - 1)
    };

    let side = grid.side as u32;
    for i in 0..side {
        for j in 0..side {
            totals[ring_of(i, j)] += 1;
        }
    }
    for &(i, j) in grid.occupied.keys() {
        occupied[ring_of(i, j)] += 1;
    }

    Ok((0..n_rings)
        .map(|k| {
            let band = RangeBand {
                inner: k as f64 * ring_width,
                outer: (k + 1) as f64 * ring_width,
            };
            let total = totals[k];
            RingOccupancy {
                band,
                total_cells: total,
                occupied_cells: occupied[k],
                occupied_fraction: if total == 0 {
                    0.0
                } else {
                    occupied[k] as f64 / total as f64
                },
                empty: total == 0,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn band(a: f64, b: f64) -> RangeBand {
        RangeBand::new(a, b).unwrap()
    }

    fn cloud_at_ranges(ranges: &[f64]) -> PointCloud {
        ranges.iter().map(|&r| Point::new(r, 0.0, 1.0)).collect()
    }

    #[test]
    fn radial_range_examples() {
        let p = Point::new(3.0, 4.0, 10.0);
        assert_eq!(radial_range(&p, RangeMode::BevL2), 5.0);
        assert_eq!(radial_range(&p, RangeMode::BevLinf), 4.0);
        let z = Point::new(0.0, 0.0, 42.0);
        assert_eq!(radial_range(&z, RangeMode::BevL2), 0.0);
        assert_eq!(radial_range(&z, RangeMode::BevLinf), 0.0);
    }

    #[test]
    fn band_validation_and_parse() {
        assert!(RangeBand::new(50.0, 50.0).is_err());
        assert!(RangeBand::new(-1.0, 5.0).is_err());
        assert_eq!("0:50".parse::<RangeBand>().unwrap(), band(0.0, 50.0));
        assert_eq!("100:".parse::<RangeBand>().unwrap().outer(), f64::INFINITY);
        assert!("10".parse::<RangeBand>().is_err());
        let json = serde_json::to_string(&RangeBand::everything()).unwrap();
        assert_eq!(json, "[0.0,null]");
        assert_eq!(serde_json::from_str::<RangeBand>(&json).unwrap(), RangeBand::everything());
        assert_eq!(band(0.0, 50.0).label(), "0-50");
    }

    #[test]
    fn donut_crop_examples() {
        let c = cloud_at_ranges(&[1.0, 49.9, 50.0, 99.9, 100.0, 300.0]);
        assert_eq!(donut_crop(&c, &RangeBand::everything(), RangeMode::BevL2), c);
        let kept = donut_crop(&cloud_at_ranges(&[49.9, 50.0, 99.9, 100.0]), &band(50.0, 100.0), RangeMode::BevL2);
        let xs: Vec<f64> = kept.iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![50.0, 99.9]);
    }

    #[test]
    fn filter_detections_examples() {
        let dets: Vec<Box3D> = [10.0, 50.0, 99.0, 150.0]
            .iter()
            .map(|&x| Box3D {
                center: [x, 0.0, 0.0],
                dims: [1.0; 3],
                yaw: 0.0,
                velocity: None,
                class_id: 0,
                score: 0.5,
            })
            .collect();
        assert_eq!(filter_detections_by_band(&dets, &RangeBand::everything(), RangeMode::BevL2), dets);
        let kept = filter_detections_by_band(&dets, &band(50.0, 100.0), RangeMode::BevL2);
        assert_eq!(kept.iter().map(|b| b.center[0]).collect::<Vec<_>>(), vec![50.0, 99.0]);
    }

    #[test]
    fn grid_sides() {
        assert_eq!(grid_side(50.0, 8.0), 800);
        assert_eq!(grid_side(100.0, 4.0), 800);
        assert_eq!(grid_side(200.0, 2.0), 800);
        assert_eq!(grid_side(150.0, 2.0), 600);
    }

    #[test]
    fn origin_maps_to_center_cell() {
        let g = voxelize(&cloud_at_ranges(&[0.0]), 50.0, 8.0).unwrap();
        assert_eq!(g.side(), 800);
        assert_eq!(g.occupied_count(), 1);
        assert_eq!(g.count_at(400, 400), 1);
    }

    #[test]
    fn edge_points_dropped() {
        let c: PointCloud = vec![Point::new(50.0, 0.0, 0.0), Point::new(-50.0, -50.0, 0.0)]
            .into_iter()
            .collect();
        let g = voxelize(&c, 50.0, 8.0).unwrap();
        assert_eq!(g.point_count(), 1);
        assert_eq!(g.count_at(0, 0), 1);
    }

    #[test]
    fn voxelize_rejects_bad_params() {
        assert!(voxelize(&PointCloud::default(), 0.0, 8.0).is_err());
        assert!(voxelize(&PointCloud::default(), 50.0, -1.0).is_err());
    }

    #[test]
    fn ring_occupancy_empty_and_full() {
        let mut g = SparsePillarGrid::empty(20.0, 1.0).unwrap();
        let rings = occupancy_by_ring(&g, 5.0).unwrap();
        assert!(rings.iter().all(|r| r.occupied_fraction == 0.0));
        g.fill();
        let rings = occupancy_by_ring(&g, 5.0).unwrap();
        assert!(rings.iter().filter(|r| !r.empty).all(|r| r.occupied_fraction == 1.0));
        let total: u64 = rings.iter().map(|r| r.total_cells).sum();
        assert_eq!(total, g.cell_count());
        assert!(occupancy_by_ring(&g, 0.0).is_err());
    }

    fn arb_cloud() -> impl Strategy<Value = PointCloud> {
        prop::collection::vec((-120.0f64..120.0, -120.0f64..120.0, -2.0f64..4.0), 0..200)
            .prop_map(|v| v.into_iter().map(|(x, y, z)| Point::new(x, y, z)).collect())
    }

    proptest! {
        #[test]
        fn crop_complement_partitions(c in arb_cloud(), a in 0.1f64..150.0) {
            let lo = donut_crop(&c, &band(0.0, a), RangeMode::BevL2);
            let hi = donut_crop(&c, &RangeBand::new(a, f64::INFINITY).unwrap(), RangeMode::BevL2);
            prop_assert_eq!(lo.len() + hi.len(), c.len());
        }

        #[test]
        fn crop_idempotent(c in arb_cloud(), a in 0.0f64..100.0, w in 1.0f64..100.0) {
            let b = band(a, a + w);
            let once = donut_crop(&c, &b, RangeMode::BevL2);
            prop_assert_eq!(donut_crop(&once, &b, RangeMode::BevL2), once);
        }

        #[test]
        fn voxelize_conserves_points(c in arb_cloud(), r in 10.0f64..100.0, s in 0.25f64..4.0) {
            let g = voxelize(&c, r, s).unwrap();
            let inside = c.iter().filter(|p| g.cell_of(p.x, p.y).is_some()).count() as u64;
            prop_assert_eq!(g.point_count(), inside);
            let in_square = c.iter().filter(|p| p.x >= -r && p.x < r && p.y >= -r && p.y < r).count() as u64;
            // cell_of and the square test agree except within one rounding of side = round(2rs)
            if (2.0 * r * s).fract() == 0.0 {
                prop_assert_eq!(inside, in_square);
            }
            prop_assert!(g.occupied().keys().all(|&(i, j)| (i as usize) < g.side() && (j as usize) < g.side()));
        }

        #[test]
        fn iso_area_side(r in 1.0f64..200.0, k in 1u32..16) {
            let s = k as f64 * 0.5;
            prop_assert_eq!(grid_side(r, s), grid_side(2.0 * r, s / 2.0));
        }

        #[test]
        fn disjoint_band_filter_partitions(xs in prop::collection::vec((0.0f64..149.0, -1.0f64..1.0), 0..50)) {
            let dets: Vec<Box3D> = xs.iter().map(|&(r, t)| Box3D {
                center: [r * t.cos(), r * t.sin(), 0.0], dims: [1.0; 3], yaw: 0.0,
                velocity: None, class_id: 0, score: 0.5,
            }).collect();
            let bands = [band(0.0, 50.0), band(50.0, 100.0), band(100.0, 150.0)];
            let total: usize = bands.iter().map(|b| filter_detections_by_band(&dets, b, RangeMode::BevL2).len()).sum();
            prop_assert_eq!(total, dets.len());
        }
    }
}
