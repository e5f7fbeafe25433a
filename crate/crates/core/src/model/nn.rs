//! Parameterized layers recorded on a [`Session`].

use rand::Rng;

use crate::autodiff::{ParamId, ParamInit, Session, Var};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init<T: Scalar, R: Rng>(init: &mut ParamInit<'_, T, R>, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        Self::init_with_std(init, name, in_dim, out_dim, bias, 0.02)
    }

    pub fn init_with_std<T: Scalar, R: Rng>(
        init: &mut ParamInit<'_, T, R>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        std: f64,
    ) -> Self {
        init.scoped(name, |init| Self {
            weight: init.trunc_normal("weight", &[in_dim, out_dim], std),
            bias: bias.then(|| init.constant("bias", &[out_dim], 0.0)),
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = sess.p(self.weight);
        let y = sess.tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = sess.p(b);
                sess.tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn num_params(in_dim: usize, out_dim: usize, bias: bool) -> usize {
        in_dim * out_dim + if bias { out_dim } else { 0 }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn init<T: Scalar, R: Rng>(init: &mut ParamInit<'_, T, R>, name: &str, dim: usize, eps: f64) -> Self {
        init.scoped(name, |init| Self {
            gamma: init.constant("weight", &[dim], 1.0),
            beta: init.constant("bias", &[dim], 0.0),
            eps,
        })
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (sess.p(self.gamma), sess.p(self.beta));
        sess.tape.layer_norm(x, g, b, T::lit(self.eps))
    }
}

/// Convolution with `[out, in, k, k]` weights.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init<T: Scalar, R: Rng>(
        init: &mut ParamInit<'_, T, R>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        init.scoped(name, |init| Self {
            weight: init.kaiming_uniform("weight", &[out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel),
            bias: init.constant("bias", &[out_ch], 0.0),
            stride,
            pad,
        })
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (sess.p(self.weight), sess.p(self.bias));
        sess.tape.conv2d(x, w, b, self.stride, self.pad)
    }

    pub fn num_params(in_ch: usize, out_ch: usize, kernel: usize) -> usize {
        out_ch * in_ch * kernel * kernel + out_ch
    }
}

/// Mean over the spatial axes of a `[C, H, W]` variable, as `[1, C]`.
pub fn spatial_mean<T: Scalar>(sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
    let shape = sess.tape.shape(x).to_vec();
    let (c, hw) = (shape[0], shape[1] * shape[2]);
    let flat = sess.tape.reshape(x, &[c, hw])?;
    let ones = sess.tape.constant(Tensor::full(&[hw, 1], T::lit(1.0 / hw as f64)));
    let col = sess.tape.matmul(flat, ones)?;
    sess.tape.reshape(col, &[1, c])
}
