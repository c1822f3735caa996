use serde::{Deserialize, Serialize};

use crate::detector::StageTimings;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    /// Population standard deviation of frame totals.
    pub std_ms: f64,
    pub stage_means: StageTimings,
    pub frames: usize,
}

pub fn latency_stats(frames: &[StageTimings]) -> Result<LatencyStats> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("latency stats need at least one frame".into()));
    }
    let n = frames.len() as f64;
    let totals: Vec<f64> = frames.iter().map(StageTimings::total).collect();
    let mean = totals.iter().sum::<f64>() / n;
    let var = totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let mut sums = [0.0; 5];
    for f in frames {
        for (s, v) in sums.iter_mut().zip(f.as_array()) {
            *s += v;
        }
    }
    Ok(LatencyStats {
        mean_ms: mean,
        std_ms: var.sqrt(),
        stage_means: StageTimings::from_array(sums.map(|s| s / n)),
        frames: frames.len(),
    })
}
