//! The two comparison encoders.
//!
//! * [`OneChannelEncoder`] runs one single-channel ViT on every channel
//!   separately and concatenates the class tokens, so its width grows with
//!   the channel count.
//! * [`InterchannelEncoder`] condenses each whole channel into a single token
//!   with a small convolutional [`TokenLearner`], so attention can only relate
//!   channels to each other.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::EncoderConfig;
use super::encoder::{ChadaEncoder, Embedding};
use super::nn::{spatial_mean, Conv2d};
use super::transformer::TransformerStack;
use crate::autodiff::{ParamId, ParamInit, ParamStore, Session, Var};
use crate::error::{Error, Result};
use crate::image::MultiChannelImage;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct OneChannelEncoder {
    pub vit: ChadaEncoder,
}

impl OneChannelEncoder {
    /// Shares every hyperparameter with `config` except the channel slots.
    pub fn init<T: Scalar, R: Rng>(config: &EncoderConfig, init: &mut ParamInit<'_, T, R>) -> Result<Self> {
        Ok(Self {
            vit: ChadaEncoder::init(&config.single_channel(), init)?,
        })
    }

    pub fn with_seed<T: Scalar>(config: &EncoderConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = Self::init(config, &mut ParamInit::new(&mut store, &mut rng))?;
        Ok((enc, store))
    }

    pub fn segment_width(&self) -> usize {
        self.vit.config.dim
    }

    /// Class tokens of every channel, concatenated in channel order.
    pub fn encode<T: Scalar>(&self, store: &ParamStore<T>, image: &MultiChannelImage) -> Result<Embedding<T>> {
        let mut out = Vec::with_capacity(image.channels() * self.segment_width());
        for c in 0..image.channels() {
            out.extend(self.vit.encode(store, &image.select_channels(&[c])?)?.0);
        }
        Ok(Embedding(out))
    }

    /// `[1, n * dim]` variable for a multi-channel image.
    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, image: &MultiChannelImage) -> Result<Var> {
        let mut parts = Vec::with_capacity(image.channels());
        for c in 0..image.channels() {
            let v = self.vit.forward(sess, &image.select_channels(&[c])?)?;
            parts.push(sess.tape.reshape(v, &[self.segment_width(), 1])?);
        }
        let col = sess.tape.concat_rows(&parts)?;
        let n = sess.tape.shape(col)[0];
        sess.tape.reshape(col, &[1, n])
    }
}

/// Widths of the token learner's convolutions after the single input channel.
pub const TOKEN_LEARNER_CHANNELS: [usize; 4] = [8, 16, 32, 64];

/// Five stride-2 3x3 convolutions (1 -> 8 -> 16 -> 32 -> 64 -> dim) with
/// GELU between them, then a spatial mean: one channel in, one token out.
#[derive(Clone, Debug)]
pub struct TokenLearner {
    pub convs: Vec<Conv2d>,
    pub side: usize,
    pub dim: usize,
}

impl TokenLearner {
    pub fn init<T: Scalar, R: Rng>(init: &mut ParamInit<'_, T, R>, side: usize, dim: usize) -> Self {
        let widths = Self::widths(dim);
        let convs = init.scoped("token_learner", |init| {
            widths
                .windows(2)
                .enumerate()
                .map(|(i, w)| Conv2d::init(init, &format!("conv{i}"), w[0], w[1], 3, 2, 1))
                .collect()
        });
        Self { convs, side, dim }
    }

    fn widths(dim: usize) -> Vec<usize> {
        let mut w = vec![1];
        w.extend(TOKEN_LEARNER_CHANNELS);
        w.push(dim);
        w
    }

    pub fn num_params(dim: usize) -> usize {
        Self::widths(dim).windows(2).map(|w| Conv2d::num_params(w[0], w[1], 3)).sum()
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, channel: &[f32], side: usize) -> Result<Var> {
        if side != self.side || channel.len() != side * side {
            return Err(Error::invalid(format!(
                "token learner expects a {s}x{s} channel, got side {side}",
                s = self.side
            )));
        }
        let data = channel.iter().map(|&v| T::lit(v as f64)).collect();
        let mut x = sess.tape.constant(Tensor::new(vec![1, side, side], data)?);
        for (i, conv) in self.convs.iter().enumerate() {
            x = conv.forward(sess, x)?;
            if i + 1 < self.convs.len() {
                x = sess.tape.gelu(x);
            }
        }
        spatial_mean(sess, x)
    }

    /// One token for a single channel.
    pub fn token_learn<T: Scalar>(&self, store: &ParamStore<T>, channel: &[f32], side: usize) -> Result<Vec<T>> {
        let mut sess = Session::inference(store);
        let v = self.forward(&mut sess, channel, side)?;
        Ok(sess.tape.value(v).data().to_vec())
    }
}

/// Channel tokens from a [`TokenLearner`], channel embeddings, class token,
/// padding to `max_channels + 1` tokens and the masked transformer.
#[derive(Clone, Debug)]
pub struct InterchannelEncoder {
    pub config: EncoderConfig,
    pub token_learner: TokenLearner,
    pub chan: ParamId,
    pub cls: ParamId,
    pub stack: TransformerStack,
}

impl InterchannelEncoder {
    pub fn init<T: Scalar, R: Rng>(config: &EncoderConfig, init: &mut ParamInit<'_, T, R>) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        Ok(Self {
            config: config.clone(),
            token_learner: TokenLearner::init(init, config.image_size, d),
            chan: init.trunc_normal("chan_embed", &[config.max_channels, d], 0.02),
            cls: init.trunc_normal("cls_token", &[1, d], 0.02),
            stack: TransformerStack::init(init, config.depth, d, config.heads, config.mlp_hidden(), config.layer_norm_eps),
        })
    }

    pub fn with_seed<T: Scalar>(config: &EncoderConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = Self::init(config, &mut ParamInit::new(&mut store, &mut rng))?;
        Ok((enc, store))
    }

    pub fn sequence_len(&self) -> usize {
        1 + self.config.max_channels
    }

    /// Token sequence and mask before the transformer.
    pub fn embed_tokens<T: Scalar>(&self, sess: &mut Session<'_, T>, image: &MultiChannelImage) -> Result<(Var, Vec<bool>)> {
        let n = image.channels();
        if n == 0 || n > self.config.max_channels {
            return Err(Error::ChannelCount {
                count: n,
                max: self.config.max_channels,
            });
        }
        let mut tokens = Vec::with_capacity(n);
        for c in 0..n {
            tokens.push(self.token_learner.forward(sess, image.channel(c), image.height())?);
        }
        let tokens = sess.tape.concat_rows(&tokens)?;
        let chan_table = sess.p(self.chan);
        let idx: Vec<usize> = (0..n).collect();
        let chan = sess.tape.gather_rows(chan_table, &idx)?;
        let tokens = sess.tape.add(tokens, chan)?;
        let cls = sess.p(self.cls);
        let mut parts = vec![cls, tokens];
        let pad = self.config.max_channels - n;
        if pad > 0 {
            parts.push(sess.tape.constant(Tensor::zeros(&[pad, self.config.dim])));
        }
        let seq = sess.tape.concat_rows(&parts)?;
        let mut mask = vec![false; self.sequence_len()];
        mask[..1 + n].fill(true);
        Ok((seq, mask))
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, image: &MultiChannelImage) -> Result<Var> {
        let (x, mask) = self.embed_tokens(sess, image)?;
        let (y, _) = self.stack.forward(sess, x, &mask, None)?;
        sess.tape.slice_rows(y, 0, 1)
    }

    pub fn encode<T: Scalar>(&self, store: &ParamStore<T>, image: &MultiChannelImage) -> Result<Embedding<T>> {
        let mut sess = Session::inference(store);
        let out = self.forward(&mut sess, image)?;
        Ok(Embedding(sess.tape.value(out).data().to_vec()))
    }
}
