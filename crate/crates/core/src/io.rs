//! On-disk formats: newline-delimited JSON for sweeps, annotations and
//! detections, an optional float32 columnar sweep file, and atomic writes.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::detector::{MeasuredRow, StageTimings};
use crate::error::{Error, Result};
use crate::geometry::{Box3D, Point, Pose, Sweep};
use crate::scenario::{FrameTruth, Scenario, ScenarioSpec};

pub const SPEC_FILE: &str = "scenario.json";
pub const SWEEPS_NDJSON: &str = "sweeps.ndjson";
pub const SWEEPS_BIN: &str = "sweeps.bin";
pub const GT_FILE: &str = "gt.ndjson";

const BIN_MAGIC: &[u8; 8] = b"RFSWEEP1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepFormat {
    #[default]
    Ndjson,
    /// float32 x/y/z columns per sweep; drops intensity and dt.
    Binary,
}

/// Writes through a temporary file in the target directory, then renames it into place.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, |w| Ok(w.write_all(bytes)?))
}

pub fn write_ndjson<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_atomic(path, |w| {
        for item in items {
            serde_json::to_writer(&mut *w, item)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

/// Reads one JSON value per non-blank line; errors name the offending line.
pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidArgument(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_sweeps_binary(path: &Path, sweeps: &[Sweep]) -> Result<()> {
    write_atomic(path, |w| {
        w.write_all(BIN_MAGIC)?;
        w.write_all(&(sweeps.len() as u64).to_le_bytes())?;
        for s in sweeps {
            let mut header = vec![s.timestamp];
            header.extend(s.ego_pose.quaternion());
            header.extend(s.ego_pose.translation());
            for v in header {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&(s.points.len() as u64).to_le_bytes())?;
            for column in [|p: &Point| p.x, |p: &Point| p.y, |p: &Point| p.z] {
                for p in &s.points {
                    w.write_all(&(column(p) as f32).to_le_bytes())?;
                }
            }
        }
        Ok(())
    })
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_sweeps_binary(path: &Path) -> Result<Vec<Sweep>> {
    let mut r = BufReader::new(File::open(path)?);
    if &read_array::<8>(&mut r)? != BIN_MAGIC {
        return Err(Error::InvalidArgument(format!(
            "{}: not a binary sweep file",
            path.display()
        )));
    }
    let n = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let mut sweeps = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let mut h = [0.0f64; 8];
        for v in &mut h {
            *v = f64::from_le_bytes(read_array(&mut r)?);
        }
        let ego_pose = Pose::from_quaternion([h[1], h[2], h[3], h[4]], [h[5], h[6], h[7]])?;
        let count = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let mut cols = [Vec::new(), Vec::new(), Vec::new()];
        for col in &mut cols {
            col.reserve(count);
            for _ in 0..count {
                col.push(f32::from_le_bytes(read_array(&mut r)?) as f64);
            }
        }
        let points = (0..count)
            .map(|i| Point::new(cols[0][i], cols[1][i], cols[2][i]))
            .collect();
        sweeps.push(Sweep {
            timestamp: h[0],
            ego_pose,
            points,
        });
    }
    Ok(sweeps)
}

/// Writes `scenario.json`, the sweeps and `gt.ndjson` into `dir`.
pub fn write_scenario_dir(dir: &Path, scenario: &Scenario, format: SweepFormat) -> Result<()> {
    fs::create_dir_all(dir)?;
    let spec = serde_json::to_vec_pretty(&scenario.spec)?;
    write_bytes_atomic(&dir.join(SPEC_FILE), &spec)?;
    match format {
        SweepFormat::Ndjson => write_ndjson(&dir.join(SWEEPS_NDJSON), &scenario.sweeps)?,
        SweepFormat::Binary => write_sweeps_binary(&dir.join(SWEEPS_BIN), &scenario.sweeps)?,
    }
    write_ndjson(&dir.join(GT_FILE), &scenario.frames)
}

/// Scenario read back from disk; `spec` is absent for hand-assembled directories.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub spec: Option<ScenarioSpec>,
    pub sweeps: Vec<Sweep>,
    pub frames: Vec<FrameTruth>,
}

pub fn read_scenario_dir(dir: &Path) -> Result<LoadedScenario> {
    let spec_path = dir.join(SPEC_FILE);
    let spec = if spec_path.exists() {
        Some(serde_json::from_slice(&fs::read(&spec_path)?)?)
    } else {
        None
    };
    let bin = dir.join(SWEEPS_BIN);
    let sweeps = if bin.exists() {
        read_sweeps_binary(&bin)?
    } else {
        read_ndjson(&dir.join(SWEEPS_NDJSON))?
    };
    let frames = read_ndjson(&dir.join(GT_FILE))?;
    Ok(LoadedScenario {
        spec,
        sweeps,
        frames,
    })
}

/// One frame of detections as stored on disk. Extra fields are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub index: u64,
    pub detections: Vec<Box3D>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

/// Boxes per frame.
pub type FrameBoxes = Vec<Vec<Box3D>>;

/// Pairs detection frames with annotation frames by frame index.
///
/// Annotated frames without a detection line count as frames with no detections.
pub fn align_frames(
    dets: &[DetectionFrame],
    gts: &[FrameTruth],
) -> Result<(FrameBoxes, FrameBoxes)> {
    let mut by_index = std::collections::BTreeMap::new();
    for d in dets {
        if by_index.insert(d.index, &d.detections).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate detections for frame {}",
                d.index
            )));
        }
    }
    let gt_indices: std::collections::BTreeSet<u64> = gts.iter().map(|g| g.index).collect();
    if let Some(extra) = by_index.keys().find(|i| !gt_indices.contains(i)) {
        return Err(Error::InvalidArgument(format!(
            "detections for frame {extra} which has no annotations"
        )));
    }
    let det_frames = gts
        .iter()
        .map(|g| by_index.get(&g.index).map(|d| d.to_vec()).unwrap_or_default())
        .collect();
    let gt_frames = gts.iter().map(|g| g.boxes.clone()).collect();
    Ok((det_frames, gt_frames))
}

#[derive(Debug, Deserialize)]
struct MeasurementCsvRow {
    range: f64,
    voxel_reciprocal: f64,
    #[serde(default)]
    occupied: Option<u64>,
    point_proc: f64,
    backbone: f64,
    neck: f64,
    head: f64,
    post_proc: f64,
}

/// Reads measured stage runtimes. Columns: `range, voxel_reciprocal, occupied,
/// point_proc, backbone, neck, head, post_proc`; `occupied` may be empty or absent.
pub fn read_measurements_csv(path: &Path) -> Result<Vec<MeasuredRow>> {
    parse_measurements_csv(File::open(path)?)
}

pub fn parse_measurements_csv(input: impl Read) -> Result<Vec<MeasuredRow>> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    rd.deserialize::<MeasurementCsvRow>()
        .map(|row| {
            let r = row?;
            Ok(MeasuredRow {
                range: r.range,
                voxel_reciprocal: r.voxel_reciprocal,
                occupied: r.occupied,
                timings: StageTimings::from_array([r.point_proc, r.backbone, r.neck, r.head, r.post_proc]),
            })
        })
        .collect()
}

/// Resolves `path` against `base` unless it is absolute.
pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}
