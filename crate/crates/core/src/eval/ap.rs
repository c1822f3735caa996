use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApInterpolation {
    /// Mean interpolated precision at recall 0, 0.01, …, 1.
    #[default]
    Points101,
    /// Exact area under the interpolated (monotone) precision envelope.
    AllPoints,
}

/// Average precision from `(score, is_tp)` pairs.
///
/// Pairs are ranked by descending score; equal scores keep their input order.
/// Returns `None` when `gt_count` is zero.
pub fn average_precision(scored: &[(f64, bool)], gt_count: usize, interp: ApInterpolation) -> Option<f64> {
    if gt_count == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0).then(a.cmp(&b)));

    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (k, &i) in order.iter().enumerate() {
        if scored[i].1 {
            tp += 1;
        }
        recall.push(tp as f64 / gt_count as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // precision envelope: max precision at any recall >= this point's recall
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }

    Some(match interp {
        ApInterpolation::Points101 => {
            let mut sum = 0.0;
            let mut k = 0;
            for step in 0..=100 {
                let r = step as f64 / 100.0;
                while k < recall.len() && recall[k] < r - 1e-12 {
                    k += 1;
                }
                if k < recall.len() {
                    sum += precision[k];
                }
            }
            sum / 101.0
        }
        ApInterpolation::AllPoints => {
            let mut area = 0.0;
            let mut prev_r = 0.0;
            for (r, p) in recall.iter().zip(&precision) {
                area += (r - prev_r) * p;
                prev_r = *r;
            }
            area
        }
    })
}
