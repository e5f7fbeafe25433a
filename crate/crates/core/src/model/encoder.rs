use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{EncoderConfig, Pooling};
use super::nn::Linear;
use super::transformer::{Block, LayerAttention, TransformerStack};
use crate::autodiff::{ParamInit, ParamStore, Session, Var};
use crate::error::{Error, Result};
use crate::image::MultiChannelImage;
use crate::tensor::{Scalar, Tensor};
use crate::tokenizer::{embed_tokens, EmbeddingTables};

/// Fixed-width image representation.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<T = f32>(pub Vec<T>);

impl<T> Embedding<T> {
    pub fn width(&self) -> usize {
        self.0.len()
    }
}

/// The channel-adaptive encoder: tokenizer, masked transformer, pooling.
#[derive(Clone, Debug)]
pub struct ChadaEncoder {
    pub config: EncoderConfig,
    pub tables: EmbeddingTables,
    pub stack: TransformerStack,
}

impl ChadaEncoder {
    pub fn init<T: Scalar, R: Rng>(config: &EncoderConfig, init: &mut ParamInit<'_, T, R>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            tables: EmbeddingTables::init(config, init),
            stack: TransformerStack::init(
                init,
                config.depth,
                config.dim,
                config.heads,
                config.mlp_hidden(),
                config.layer_norm_eps,
            ),
        })
    }

    /// Fresh encoder and parameter store from a seed.
    pub fn with_seed<T: Scalar>(config: &EncoderConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = Self::init(config, &mut ParamInit::new(&mut store, &mut rng))?;
        Ok((enc, store))
    }

    /// Re-derives the layout against an existing store (e.g. a loaded
    /// checkpoint), checking every name and shape.
    pub fn bind<T: Scalar>(config: &EncoderConfig, store: &ParamStore<T>) -> Result<Self> {
        let (enc, reference) = Self::with_seed::<T>(config, 0)?;
        super::check_layout(&reference, store)?;
        Ok(enc)
    }

    /// Token states after the final norm, `[sequence_len, dim]`, and the mask.
    pub fn forward_tokens<T: Scalar>(
        &self,
        sess: &mut Session<'_, T>,
        image: &MultiChannelImage,
        capture: Option<usize>,
    ) -> Result<(Var, Vec<bool>, Option<LayerAttention>)> {
        let (x, mask) = embed_tokens(sess, &self.tables, image, &self.config)?;
        let (y, att) = self.stack.forward(sess, x, &mask, capture)?;
        Ok((y, mask, att))
    }

    /// Pooled `[1, dim]` embedding variable.
    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, image: &MultiChannelImage) -> Result<Var> {
        let (y, mask, _) = self.forward_tokens(sess, image, None)?;
        self.pool(sess, y, &mask)
    }

    pub fn pool<T: Scalar>(&self, sess: &mut Session<'_, T>, tokens: Var, mask: &[bool]) -> Result<Var> {
        match self.config.pooling {
            Pooling::Cls => sess.tape.slice_rows(tokens, 0, 1),
            Pooling::Mean => {
                let rows: Vec<usize> = (1..mask.len()).filter(|&i| mask[i]).collect();
                sess.tape.mean_rows(tokens, &rows)
            }
        }
    }

    pub fn encode<T: Scalar>(&self, store: &ParamStore<T>, image: &MultiChannelImage) -> Result<Embedding<T>> {
        let mut sess = Session::inference(store);
        let out = self.forward(&mut sess, image)?;
        Ok(Embedding(sess.tape.value(out).data().to_vec()))
    }

    /// Attention weights of `layer` for one image.
    pub fn attention_maps<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        image: &MultiChannelImage,
        layer: usize,
    ) -> Result<AttentionMaps> {
        if layer >= self.config.depth {
            return Err(Error::LayerOutOfRange {
                layer,
                depth: self.config.depth,
            });
        }
        let mut sess = Session::inference(store);
        let (_, mask, att) = self.forward_tokens(&mut sess, image, Some(layer))?;
        let att = att.expect("captured layer");
        Ok(AttentionMaps {
            layer,
            n_channels: image.channels(),
            grid_side: self.config.grid_side(),
            seq_len: mask.len(),
            heads: att.heads,
            real: att.real,
            weights: att.weights,
        })
    }
}

/// Closed-form learnable parameter count of a [`ChadaEncoder`].
pub fn parameter_census(config: &EncoderConfig) -> usize {
    let d = config.dim;
    let p2 = config.patch_size * config.patch_size;
    let tables = Linear::num_params(p2, d, true)
        + config.patches_per_channel() * d
        + if config.channel_embedding { config.max_channels * d } else { 0 }
        + d;
    tables + config.depth * Block::num_params(d, config.mlp_hidden()) + 2 * d
}

/// Attention weights of one layer, restricted to real tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaps {
    pub layer: usize,
    pub n_channels: usize,
    pub grid_side: usize,
    pub seq_len: usize,
    pub heads: usize,
    /// Sequence positions of the real tokens (the class token is position 0).
    pub real: Vec<usize>,
    /// `[heads][real][real]`.
    pub weights: Vec<f32>,
}

impl AttentionMaps {
    pub fn head(&self, h: usize) -> &[f32] {
        let r = self.real.len();
        &self.weights[h * r * r..(h + 1) * r * r]
    }

    /// Full `seq_len x seq_len` map of head `h` with zeros on padded keys and
    /// padded queries.
    pub fn dense(&self, h: usize) -> Tensor<f32> {
        let (t, r) = (self.seq_len, self.real.len());
        let mut out = Tensor::zeros(&[t, t]);
        let w = self.head(h);
        for (qi, &q) in self.real.iter().enumerate() {
            for (ki, &k) in self.real.iter().enumerate() {
                out.data_mut()[q * t + k] = w[qi * r + ki];
            }
        }
        out
    }

    /// Class-token query row of head `h`, split per channel into
    /// `grid_side x grid_side` heatmaps (row-major).
    pub fn cls_heatmaps(&self, h: usize) -> Vec<Vec<f32>> {
        let m = self.grid_side * self.grid_side;
        let r = self.real.len();
        let row = &self.head(h)[..r];
        (0..self.n_channels)
            .map(|c| {
                // Real tokens are contiguous: position 1 + c*m + cell sits at
                // real index 1 + c*m + cell.
                row[1 + c * m..1 + (c + 1) * m].to_vec()
            })
            .collect()
    }
}
