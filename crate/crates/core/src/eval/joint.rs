use std::fmt::Write as _;

use super::pca::{pca_fit, Pca};
use crate::error::{Error, Result};

/// One dataset's embeddings and labels.
#[derive(Clone, Copy, Debug)]
pub struct JointInput<'a> {
    pub name: &'a str,
    pub embeddings: &'a [Vec<f64>],
    pub labels: &'a [f64],
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointRow {
    pub dataset: String,
    pub label: f64,
    pub pcs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointAnalysis {
    pub pca: Pca,
    pub rows: Vec<JointRow>,
    /// Best accuracy of a single threshold on the first component at telling
    /// the two datasets apart.
    pub pc1_accuracy: f64,
    pub pc1_threshold: f64,
}

/// Best threshold classifier on `values` for the boolean `is_b`, either
/// direction. Returns (accuracy, threshold).
pub fn threshold_accuracy(values: &[f64], is_b: &[bool]) -> (f64, f64) {
    let mut pts: Vec<(f64, bool)> = values.iter().copied().zip(is_b.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pts.len();
    let mut b_prefix = vec![0usize; n + 1];
    for i in 0..n {
        b_prefix[i + 1] = b_prefix[i] + pts[i].1 as usize;
    }
    let total_b = b_prefix[n];
    let mut best = (0.0, f64::NEG_INFINITY);
    // Split after the first `i` sorted points; ties cannot be split.
    for i in 0..=n {
        if i > 0 && i < n && pts[i].0 == pts[i - 1].0 {
            continue;
        }
        let (b_below, b_above) = (b_prefix[i], total_b - b_prefix[i]);
        let (a_below, a_above) = (i - b_below, (n - i) - b_above);
        let correct = (a_below + b_above).max(b_below + a_above);
        let acc = correct as f64 / n as f64;
        if acc > best.0 {
            let thr = match i {
                0 => pts[0].0 - 1.0,
                _ if i == n => pts[n - 1].0 + 1.0,
                _ => 0.5 * (pts[i - 1].0 + pts[i].0),
            };
            best = (acc, thr);
        }
    }
    best
}

/// PCA on the union of two datasets encoded by the same encoder. Embedding
/// widths must agree.
pub fn joint_space_analysis(a: JointInput<'_>, b: JointInput<'_>, components: usize) -> Result<JointAnalysis> {
    for input in [&a, &b] {
        if input.embeddings.is_empty() || input.embeddings.len() != input.labels.len() {
            return Err(Error::invalid(format!("dataset {} is empty or mislabeled", input.name)));
        }
    }
    let wa = a.embeddings[0].len();
    for e in a.embeddings.iter().chain(b.embeddings) {
        if e.len() != wa {
            return Err(Error::WidthMismatch { left: wa, right: e.len() });
        }
    }
    let union: Vec<Vec<f64>> = a.embeddings.iter().chain(b.embeddings).cloned().collect();
    let pca = pca_fit(&union, components)?;
    let mut rows = Vec::with_capacity(union.len());
    for input in [&a, &b] {
        for (e, &l) in input.embeddings.iter().zip(input.labels) {
            rows.push(JointRow {
                dataset: input.name.to_string(),
                label: l,
                pcs: pca.project(e),
            });
        }
    }
    let pc1: Vec<f64> = rows.iter().map(|r| r.pcs[0]).collect();
    let is_b: Vec<bool> = rows.iter().map(|r| r.dataset == b.name).collect();
    let (pc1_accuracy, pc1_threshold) = threshold_accuracy(&pc1, &is_b);
    Ok(JointAnalysis {
        pca,
        rows,
        pc1_accuracy,
        pc1_threshold,
    })
}

impl JointAnalysis {
    /// `dataset,label,pc1..pcK` rows.
    pub fn to_csv(&self) -> String {
        let k = self.pca.components.len();
        let mut out = String::from("dataset,label");
        for i in 1..=k {
            write!(out, ",pc{i}").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            write!(out, "{},{}", r.dataset, r.label).unwrap();
            for v in &r.pcs {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}
