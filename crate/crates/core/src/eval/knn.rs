use std::collections::BTreeMap;

use super::probe::feature_width;
use crate::error::{Error, Result};

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `1 - cos(a, b)`; a zero vector is at distance 1 from everything.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Majority label among the `k` nearest training points. Ties between
/// labels go to the smaller summed distance, then the lower label.
pub fn knn_predict(train: &[Vec<f64>], labels: &[usize], query: &[f64], k: usize) -> Result<usize> {
    let d = feature_width(train, labels)?;
    if query.len() != d {
        return Err(Error::WidthMismatch { left: d, right: query.len() });
    }
    if k == 0 || k > train.len() {
        return Err(Error::invalid(format!("k = {k} must be in [1, {}]", train.len())));
    }
    let mut dist: Vec<(f64, usize)> = train.iter().enumerate().map(|(i, t)| (cosine_distance(t, query), i)).collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut votes: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for &(dd, i) in &dist[..k] {
        let e = votes.entry(labels[i]).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += dd;
    }
    let best = votes
        .iter()
        .min_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.total_cmp(&b.1 .1)).then(a.0.cmp(b.0)))
        .map(|(&l, _)| l)
        .unwrap();
    Ok(best)
}

/// Top-1 accuracy of [`knn_predict`] over a test set.
pub fn knn_eval(train: &[Vec<f64>], train_labels: &[usize], test: &[Vec<f64>], test_labels: &[usize], k: usize) -> Result<f64> {
    if test.is_empty() || test.len() != test_labels.len() {
        return Err(Error::invalid("knn test set is empty or mislabeled"));
    }
    let mut hits = 0;
    for (q, &l) in test.iter().zip(test_labels) {
        if knn_predict(train, train_labels, q, k)? == l {
            hits += 1;
        }
    }
    Ok(hits as f64 / test.len() as f64)
}
