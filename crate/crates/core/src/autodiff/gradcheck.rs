//! Central-difference gradient verification.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Grads, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// max |g_a - g_c| / max(1e-8, |g_a| + |g_c|)
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub coords_checked: usize,
    /// Coordinate with the largest relative error, as `(param index, element)`.
    pub worst: Option<(usize, usize)>,
}

impl GradCheck {
    fn new() -> Self {
        Self {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            coords_checked: 0,
            worst: None,
        }
    }

    fn record(&mut self, analytic: f64, central: f64, at: (usize, usize)) {
        let abs = (analytic - central).abs();
        let rel = abs / (analytic.abs() + central.abs()).max(1e-8);
        if rel > self.max_rel_error {
            self.max_rel_error = rel;
            self.worst = Some(at);
        }
        self.max_abs_error = self.max_abs_error.max(abs);
        self.coords_checked += 1;
    }
}

/// Compares the analytic gradient returned by `f` against central
/// differences `(f(θ+εe) - f(θ-εe)) / 2ε` at `coords` (all coordinates when
/// `None`).
pub fn finite_diff_check<F>(mut f: F, theta: &Tensor<f64>, eps: f64, coords: Option<&[usize]>) -> Result<GradCheck>
where
    F: FnMut(&Tensor<f64>) -> Result<(f64, Tensor<f64>)>,
{
    let (v1, analytic) = f(theta)?;
    let (v2, _) = f(theta)?;
    if v1.to_bits() != v2.to_bits() {
        return Err(Error::NonDeterministic { first: v1, second: v2 });
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..theta.numel()).collect();
            &all
        }
    };
    let mut report = GradCheck::new();
    let mut probe = theta.clone();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let (plus, _) = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let (minus, _) = f(&probe)?;
        probe.data_mut()[i] = orig;
        report.record(analytic.data()[i], (plus - minus) / (2.0 * eps), (0, i));
    }
    Ok(report)
}

/// Gradient check over a whole parameter store.
///
/// `loss` evaluates the scalar objective for a store; `analytic` holds the
/// gradients being verified. `per_param` coordinates are sampled from every
/// parameter tensor (all of them when the tensor is smaller), so every table
/// is covered.
pub fn check_store_gradients<F>(
    mut loss: F,
    store: &ParamStore<f64>,
    analytic: &Grads<f64>,
    eps: f64,
    per_param: usize,
    seed: u64,
) -> Result<GradCheck>
where
    F: FnMut(&ParamStore<f64>) -> Result<f64>,
{
    let v1 = loss(store)?;
    let v2 = loss(store)?;
    if v1.to_bits() != v2.to_bits() {
        return Err(Error::NonDeterministic { first: v1, second: v2 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheck::new();
    let mut probe = store.clone();
    for p in 0..store.len() {
        let id = ParamId(p);
        let n = store.get(id).numel();
        let picks = index::sample(&mut rng, n, per_param.min(n)).into_vec();
        for i in picks {
            let orig = probe.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + eps;
            let plus = loss(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - eps;
            let minus = loss(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            report.record(analytic.0[p].data()[i], (plus - minus) / (2.0 * eps), (p, i));
        }
    }
    Ok(report)
}
