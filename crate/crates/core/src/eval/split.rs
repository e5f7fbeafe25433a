use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::stream;

/// Stratified subset of `labels`: for every class, the first
/// `max(1, round(fraction * count))` entries of a seeded permutation of that
/// class's indices. Prefixes of one permutation make smaller fractions nest
/// inside larger ones. Returns sorted indices.
pub fn low_data_split(labels: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if labels.is_empty() {
        return Err(Error::invalid("low-data split of an empty label set"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut out = Vec::new();
    for (class, mut idx) in by_class {
        idx.shuffle(&mut stream(seed, &[class as u64]));
        let take = ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len());
        out.extend_from_slice(&idx[..take]);
    }
    out.sort_unstable();
    Ok(out)
}
