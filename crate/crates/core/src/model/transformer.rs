//! Pre-norm transformer blocks with key-padding masked attention.

use rand::Rng;

use super::nn::{LayerNorm, Linear};
use crate::autodiff::{ParamInit, Session, Var};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn init<T: Scalar, R: Rng>(init: &mut ParamInit<'_, T, R>, name: &str, dim: usize, heads: usize) -> Self {
        init.scoped(name, |init| Self {
            q: Linear::init(init, "q", dim, dim, true),
            k: Linear::init(init, "k", dim, dim, true),
            v: Linear::init(init, "v", dim, dim, true),
            out: Linear::init(init, "out", dim, dim, true),
            heads,
        })
    }

    /// Returns the projected output and the raw attention node (whose
    /// weights can be read with [`crate::autodiff::Tape::attention_weights`]).
    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var, mask: &[bool]) -> Result<(Var, Var)> {
        let q = self.q.forward(sess, x)?;
        let k = self.k.forward(sess, x)?;
        let v = self.v.forward(sess, x)?;
        let attn = sess.tape.masked_attention(q, k, v, mask, self.heads)?;
        Ok((self.out.forward(sess, attn)?, attn))
    }
}

/// `x + MHSA(LN(x))` followed by `x + MLP(LN(x))`.
#[derive(Clone, Debug)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Block {
    pub fn init<T: Scalar, R: Rng>(
        init: &mut ParamInit<'_, T, R>,
        name: &str,
        dim: usize,
        heads: usize,
        hidden: usize,
        eps: f64,
    ) -> Self {
        init.scoped(name, |init| Self {
            norm1: LayerNorm::init(init, "norm1", dim, eps),
            attn: MultiHeadAttention::init(init, "attn", dim, heads),
            norm2: LayerNorm::init(init, "norm2", dim, eps),
            fc1: Linear::init(init, "mlp.fc1", dim, hidden, true),
            fc2: Linear::init(init, "mlp.fc2", hidden, dim, true),
        })
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var, mask: &[bool]) -> Result<(Var, Var)> {
        let h = self.norm1.forward(sess, x)?;
        let (a, attn) = self.attn.forward(sess, h, mask)?;
        let x = sess.tape.add(x, a)?;
        let h = self.norm2.forward(sess, x)?;
        let h = self.fc1.forward(sess, h)?;
        let h = sess.tape.gelu(h);
        let h = self.fc2.forward(sess, h)?;
        Ok((sess.tape.add(x, h)?, attn))
    }

    pub fn num_params(dim: usize, hidden: usize) -> usize {
        2 * 2 * dim + 4 * Linear::num_params(dim, dim, true) + Linear::num_params(dim, hidden, true) + Linear::num_params(hidden, dim, true)
    }
}

/// Attention weights of one layer restricted to the real tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerAttention {
    pub heads: usize,
    /// Sequence positions of the real tokens.
    pub real: Vec<usize>,
    /// `[heads][real][real]`, row = query.
    pub weights: Vec<f32>,
}

/// Blocks followed by a final norm.
#[derive(Clone, Debug)]
pub struct TransformerStack {
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
}

impl TransformerStack {
    pub fn init<T: Scalar, R: Rng>(
        init: &mut ParamInit<'_, T, R>,
        depth: usize,
        dim: usize,
        heads: usize,
        hidden: usize,
        eps: f64,
    ) -> Self {
        Self {
            blocks: (0..depth)
                .map(|i| Block::init(init, &format!("blocks.{i}"), dim, heads, hidden, eps))
                .collect(),
            norm: LayerNorm::init(init, "norm", dim, eps),
        }
    }

    /// Runs every block with the same mask. On tapes without gradients the
    /// recorded graph is dropped after each block. When `capture` names a
    /// layer, its attention weights are copied out.
    pub fn forward<T: Scalar>(
        &self,
        sess: &mut Session<'_, T>,
        mut x: Var,
        mask: &[bool],
        capture: Option<usize>,
    ) -> Result<(Var, Option<LayerAttention>)> {
        if let Some(layer) = capture {
            if layer >= self.blocks.len() {
                return Err(Error::LayerOutOfRange {
                    layer,
                    depth: self.blocks.len(),
                });
            }
        }
        let mut captured = None;
        for (i, block) in self.blocks.iter().enumerate() {
            let (y, attn) = block.forward(sess, x, mask)?;
            if capture == Some(i) {
                let (heads, real, w) = sess.tape.attention_weights(attn).expect("attention node");
                captured = Some(LayerAttention {
                    heads,
                    real: real.to_vec(),
                    weights: w.iter().map(|v| v.as_f64() as f32).collect(),
                });
            }
            x = if sess.tape.grad_enabled() { y } else { sess.truncate_to(y) };
        }
        Ok((self.norm.forward(sess, x)?, captured))
    }
}
