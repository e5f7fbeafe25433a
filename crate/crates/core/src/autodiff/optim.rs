use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.04,
        }
    }
}

/// AdamW with decoupled weight decay. Moments start at zero.
#[derive(Clone, Debug)]
pub struct AdamW<T: Scalar = f32> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.entries().iter().map(|e| Tensor::zeros(e.value.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>, lr: f64) -> Result<()> {
        check_finite(params, grads)?;
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let (lr_t, eps) = (T::lit(lr), T::lit(c.eps));
        let (bc1, bc2) = (T::lit(bc1), T::lit(bc2));
        for (i, g) in grads.0.iter().enumerate() {
            let id = super::ParamId(i);
            let wd = if params.entries()[i].decay {
                T::lit(c.weight_decay)
            } else {
                T::zero()
            };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let theta = params.get_mut(id).data_mut();
            for j in 0..theta.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                theta[j] -= lr_t * (mhat / (vhat.sqrt() + eps) + wd * theta[j]);
            }
        }
        Ok(())
    }
}

/// Plain SGD with decoupled weight decay: `theta -= lr * (g + wd * theta)`.
pub fn sgd_step<T: Scalar>(params: &mut ParamStore<T>, grads: &Grads<T>, lr: f64, weight_decay: f64) -> Result<()> {
    check_finite(params, grads)?;
    let (lr, wd) = (T::lit(lr), T::lit(weight_decay));
    for (i, g) in grads.0.iter().enumerate() {
        let theta = params.get_mut(super::ParamId(i)).data_mut();
        for (t, &gj) in theta.iter_mut().zip(g.data()) {
            *t -= lr * (gj + wd * *t);
        }
    }
    Ok(())
}

fn check_finite<T: Scalar>(params: &ParamStore<T>, grads: &Grads<T>) -> Result<()> {
    if grads.0.len() != params.len() {
        return Err(Error::invalid(format!(
            "{} gradients for {} parameters",
            grads.0.len(),
            params.len()
        )));
    }
    for (e, g) in params.entries().iter().zip(&grads.0) {
        if e.value.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "optimizer step",
                left: e.value.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", e.name)));
        }
    }
    Ok(())
}

/// Cosine annealing from `base` at step 0 to `final_value` at `total`.
pub fn cosine_schedule(step: u64, total: u64, base: f64, final_value: f64) -> f64 {
    if total == 0 {
        return final_value;
    }
    let t = step.min(total) as f64 / total as f64;
    final_value + 0.5 * (base - final_value) * (1.0 + (std::f64::consts::PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> (ParamStore<f64>, Grads<f64>) {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::full(&[1, 1], v), true);
        let g = Grads::zeros_like(&s);
        (s, g)
    }

    #[test]
    fn sgd_hand_case() {
        let (mut s, mut g) = one(1.0);
        g.0[0].data_mut()[0] = 0.5;
        sgd_step(&mut s, &g, 0.1, 0.0).unwrap();
        assert!((s.get(super::super::ParamId(0)).data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let (mut s, g) = one(1.25);
        let mut opt = AdamW::new(
            AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
            &s,
        );
        opt.step(&mut s, &g, 0.1).unwrap();
        sgd_step(&mut s, &g, 0.1, 0.0).unwrap();
        assert_eq!(s.get(super::super::ParamId(0)).data()[0], 1.25);
    }

    #[test]
    fn adamw_single_step_matches_hand_formula() {
        let (mut s, mut g) = one(2.0);
        g.0[0].data_mut()[0] = 0.3;
        let cfg = AdamWConfig {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.1,
        };
        let mut opt = AdamW::new(cfg, &s);
        opt.step(&mut s, &g, 0.01).unwrap();
        let m: f64 = 0.1 * 0.3;
        let v: f64 = 0.01 * 0.09;
        let mhat = m / (1.0 - 0.9);
        let vhat = v / (1.0 - 0.99);
        let expect = 2.0 - 0.01 * (mhat / (vhat.sqrt() + 1e-8) + 0.1 * 2.0);
        assert!((s.get(super::super::ParamId(0)).data()[0] - expect).abs() < 1e-10);
    }

    #[test]
    fn nan_gradient_is_named() {
        let (mut s, mut g) = one(1.0);
        g.0[0].data_mut()[0] = f64::NAN;
        let err = sgd_step(&mut s, &g, 0.1, 0.0).unwrap_err().to_string();
        assert!(err.contains('w'), "{err}");
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_schedule(0, 100, 1.0, 0.1), 1.0);
        assert!((cosine_schedule(100, 100, 1.0, 0.1) - 0.1).abs() < 1e-15);
        assert!((cosine_schedule(50, 100, 1.0, 0.1) - 0.55).abs() < 1e-12);
    }
}
