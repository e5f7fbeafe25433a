use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Top1,
    R2,
    Mse,
    Mae,
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MetricKind::Top1 => "top1",
            MetricKind::R2 => "r2",
            MetricKind::Mse => "mse",
            MetricKind::Mae => "mae",
        })
    }
}

/// For `Top1`, `pred` and `target` hold class indices (as floats) and the
/// result is the fraction of exact matches; the others compare values over
/// the flattened arrays.
pub fn compute_metrics(pred: &[f64], target: &[f64], kind: MetricKind) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::WidthMismatch {
            left: pred.len(),
            right: target.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::invalid("metric over zero values"));
    }
    let n = pred.len() as f64;
    let pairs = pred.iter().zip(target);
    Ok(match kind {
        MetricKind::Top1 => pairs.filter(|(p, t)| p == t).count() as f64 / n,
        MetricKind::Mse => pairs.map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n,
        MetricKind::Mae => pairs.map(|(p, t)| (p - t).abs()).sum::<f64>() / n,
        MetricKind::R2 => {
            let mean = target.iter().sum::<f64>() / n;
            let ss_tot: f64 = target.iter().map(|t| (t - mean) * (t - mean)).sum();
            if ss_tot == 0.0 {
                return Err(Error::invalid("r2 is undefined for a constant target"));
            }
            let ss_res: f64 = pairs.map(|(p, t)| (p - t) * (p - t)).sum();
            1.0 - ss_res / ss_tot
        }
    })
}

/// Fraction of rows whose argmax (first maximum) equals the label.
pub fn top1_from_scores(scores: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let pred: Vec<f64> = scores.iter().map(|s| argmax(s) as f64).collect();
    let target: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    compute_metrics(&pred, &target, MetricKind::Top1)
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Mean and sample standard deviation (zero for a single value).
pub fn aggregate_seeds(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("no seed values to aggregate"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}
