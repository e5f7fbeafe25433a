use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{argmax, top1_from_scores};
use super::split::low_data_split;
use crate::autodiff::cosine_schedule;
use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Share of the training set used, drawn by [`low_data_split`].
    pub fraction: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.1,
            batch_size: 32,
            fraction: 1.0,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

/// Softmax regression on standardized features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    pub dim: usize,
    pub classes: usize,
    /// `[dim][classes]`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl LinearProbe {
    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    fn logits_std(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (i, &zi) in z.iter().enumerate() {
            let row = &self.weights[i * self.classes..(i + 1) * self.classes];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += zi * w;
            }
        }
        out
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.logits_std(&self.standardize(x))
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        let scores: Vec<Vec<f64>> = features.iter().map(|x| self.scores(x)).collect();
        top1_from_scores(&scores, labels)
    }
}

/// Checks a feature matrix and returns its width.
pub(crate) fn feature_width(features: &[Vec<f64>], labels: &[usize]) -> Result<usize> {
    if features.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} feature rows for {} labels",
            features.len(),
            labels.len()
        )));
    }
    let d = features.first().map(|f| f.len()).ok_or_else(|| Error::invalid("no training rows"))?;
    if let Some(f) = features.iter().find(|f| f.len() != d) {
        return Err(Error::WidthMismatch { left: d, right: f.len() });
    }
    Ok(d)
}

/// Trains only a linear layer (plus bias) with softmax cross-entropy and
/// minibatch SGD under a cosine learning-rate schedule.
pub fn train_linear_probe(features: &[Vec<f64>], labels: &[usize], config: &ProbeConfig) -> Result<LinearProbe> {
    let d = feature_width(features, labels)?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::invalid("linear probe needs at least two classes"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("probe batch_size must be at least 1"));
    }
    let subset = low_data_split(labels, config.fraction, config.seed)?;

    let n = subset.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in &subset {
        for (m, v) in mean.iter_mut().zip(&features[i]) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; d];
    for &i in &subset {
        for ((s, v), m) in scale.iter_mut().zip(&features[i]).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-12 { s.sqrt() } else { 1.0 };
    }
    let mut probe = LinearProbe {
        dim: d,
        classes,
        weights: vec![0.0; d * classes],
        bias: vec![0.0; classes],
        mean,
        scale,
    };
    let z: Vec<Vec<f64>> = subset.iter().map(|&i| probe.standardize(&features[i])).collect();
    let y: Vec<usize> = subset.iter().map(|&i| labels[i]).collect();

    let batches_per_epoch = subset.len().div_ceil(config.batch_size);
    let total = (config.epochs * batches_per_epoch) as u64;
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..z.len()).collect();
    let mut gw = vec![0.0; d * classes];
    let mut gb = vec![0.0; classes];
    for epoch in 0..config.epochs {
        order.shuffle(&mut stream(config.seed, &[epoch as u64]));
        for batch in order.chunks(config.batch_size) {
            gw.iter_mut().for_each(|g| *g = 0.0);
            gb.iter_mut().for_each(|g| *g = 0.0);
            let inv = 1.0 / batch.len() as f64;
            for &r in batch {
                let logits = probe.logits_std(&z[r]);
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                // d(CE)/d(logit_k) = p_k - [k == y]
                for k in 0..classes {
                    let delta = (exps[k] / sum - if k == y[r] { 1.0 } else { 0.0 }) * inv;
                    gb[k] += delta;
                    for (i, &zi) in z[r].iter().enumerate() {
                        gw[i * classes + k] += delta * zi;
                    }
                }
            }
            let lr = cosine_schedule(step, total, config.lr, 0.0);
            for (w, g) in probe.weights.iter_mut().zip(&gw) {
                *w -= lr * (g + config.weight_decay * *w);
            }
            for (b, g) in probe.bias.iter_mut().zip(&gb) {
                *b -= lr * g;
            }
            step += 1;
        }
    }
    if probe.weights.iter().chain(&probe.bias).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("linear probe weights".into()));
    }
    Ok(probe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(n: usize, seed: u64, sep: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = stream(seed, &[]);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let center = if c == 0 { -sep } else { sep };
            x.push(vec![center + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn separable_blobs() {
        let (x, y) = blobs(200, 1, 3.0);
        let p = train_linear_probe(&x, &y, &ProbeConfig::default()).unwrap();
        assert!(p.accuracy(&x, &y).unwrap() >= 0.99);
    }

    #[test]
    fn untrained_probe_predicts_one_class() {
        let (x, y) = blobs(400, 2, 3.0);
        let cfg = ProbeConfig {
            epochs: 0,
            ..ProbeConfig::default()
        };
        let acc = train_linear_probe(&x, &y, &cfg).unwrap().accuracy(&x, &y).unwrap();
        // Balanced classes: chance, inside a 3-sigma binomial interval.
        assert!((acc - 0.5).abs() <= 3.0 * (0.25f64 / 400.0).sqrt());
    }

    #[test]
    fn deterministic_and_rejects_single_class() {
        let (x, y) = blobs(100, 3, 1.0);
        let cfg = ProbeConfig {
            fraction: 0.1,
            seed: 4,
            ..ProbeConfig::default()
        };
        assert_eq!(train_linear_probe(&x, &y, &cfg).unwrap(), train_linear_probe(&x, &y, &cfg).unwrap());
        assert!(train_linear_probe(&x, &[1; 100], &cfg).is_err());
    }
}
