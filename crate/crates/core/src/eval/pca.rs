use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Principal axes of mean-centered data, strongest first.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `[components][dim]`, orthonormal rows. Each row's largest-magnitude
    /// entry is positive.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

pub fn pca_fit(data: &[Vec<f64>], components: usize) -> Result<Pca> {
    let n = data.len();
    if n < 2 {
        return Err(Error::invalid(format!("PCA needs at least 2 rows, got {n}")));
    }
    let d = data[0].len();
    if let Some(r) = data.iter().find(|r| r.len() != d) {
        return Err(Error::WidthMismatch { left: d, right: r.len() });
    }
    if components == 0 || components > d.min(n) {
        return Err(Error::invalid(format!(
            "cannot extract {components} components from {n} rows of width {d}"
        )));
    }
    let mut mean = vec![0.0; d];
    for r in data {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let x = DMatrix::from_fn(n, d, |i, j| data[i][j] - mean[j]);
    let total: f64 = x.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(Error::invalid("PCA of identical rows has no variance"));
    }
    let svd = x.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));

    let mut comps = Vec::with_capacity(components);
    let mut var = Vec::with_capacity(components);
    let mut ratio = Vec::with_capacity(components);
    for &k in order.iter().take(components) {
        let mut row: Vec<f64> = v_t.row(k).iter().copied().collect();
        let lead = row.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if lead < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        let s2 = svd.singular_values[k].powi(2);
        comps.push(row);
        var.push(s2 / (n - 1) as f64);
        ratio.push(s2 / total);
    }
    Ok(Pca {
        mean,
        components: comps,
        explained_variance: var,
        explained_variance_ratio: ratio,
    })
}

impl Pca {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((ci, xi), mi)| ci * (xi - mi)).sum())
            .collect()
    }

    /// Back to the input space (centered data plus mean).
    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &zi) in self.components.iter().zip(z) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += zi * ci;
            }
        }
        out
    }

    /// `max |Q^T Q - I|` over the component rows.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, a) in self.components.iter().enumerate() {
            for (j, b) in self.components.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}
