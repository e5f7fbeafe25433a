//! Reconstructing a held-out channel from the embedding of the others.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MetricKind};
use crate::autodiff::{AdamW, AdamWConfig, Grads, ParamInit, ParamStore, Session, Var};
use crate::error::{Error, Result};
use crate::image::MultiChannelImage;
use crate::model::nn::{Conv2d, Linear};
use crate::model::Backbone;
use crate::rng::stream;
use crate::tensor::{Scalar, Tensor};

/// Parameter budget of the reference decoder.
pub const DECODER_BUDGET: usize = 5_200_000;
/// Feature maps from the spatial seed down to the single output channel.
pub const DECODER_CHANNELS: [usize; 6] = [128, 64, 32, 16, 8, 1];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub seed_side: usize,
    pub channels: Vec<usize>,
}

impl DecoderConfig {
    pub fn out_side(&self) -> usize {
        self.seed_side << (self.channels.len() - 1)
    }

    fn seed_len(&self) -> usize {
        self.seed_side * self.seed_side * self.channels[0]
    }

    fn conv_params(&self) -> usize {
        self.channels.windows(2).map(|w| Conv2d::num_params(w[0], w[1], 3)).sum()
    }

    pub fn num_params(&self) -> usize {
        Linear::num_params(self.in_dim, self.hidden, true)
            + Linear::num_params(self.hidden, self.seed_len(), true)
            + self.conv_params()
    }

    /// Picks the first hidden width so the total lands as close as possible
    /// to `budget`; everything else is fixed by `in_dim` and `out_side`.
    pub fn with_budget(in_dim: usize, out_side: usize, budget: usize) -> Result<Self> {
        let stages = DECODER_CHANNELS.len() - 1;
        if in_dim == 0 || out_side == 0 || !out_side.is_multiple_of(1 << stages) {
            return Err(Error::invalid(format!(
                "decoder output side {out_side} must be a positive multiple of {}",
                1 << stages
            )));
        }
        let mut cfg = Self {
            in_dim,
            hidden: 1,
            seed_side: out_side >> stages,
            channels: DECODER_CHANNELS.to_vec(),
        };
        let fixed = cfg.seed_len() + cfg.conv_params();
        let per_hidden = in_dim + 1 + cfg.seed_len();
        cfg.hidden = ((budget.saturating_sub(fixed) as f64 / per_hidden as f64).round() as usize).max(1);
        Ok(cfg)
    }

    /// The 224x224 decoder for `in_dim`-wide embeddings.
    pub fn reference(in_dim: usize) -> Self {
        Self::with_budget(in_dim, 224, DECODER_BUDGET).expect("224 is a multiple of 32")
    }
}

/// Two fully connected layers to a `channels[0] x seed x seed` map, then
/// (2x upsample, 3x3 convolution) stages down to one channel and a sigmoid.
#[derive(Clone, Debug)]
pub struct ChannelDecoder {
    pub config: DecoderConfig,
    pub fc1: Linear,
    pub fc2: Linear,
    pub convs: Vec<Conv2d>,
}

impl ChannelDecoder {
    pub fn init<T: Scalar, R: Rng>(config: &DecoderConfig, init: &mut ParamInit<'_, T, R>) -> Self {
        init.scoped("decoder", |init| Self {
            config: config.clone(),
            fc1: Linear::init(init, "fc1", config.in_dim, config.hidden, true),
            fc2: Linear::init(init, "fc2", config.hidden, config.seed_len(), true),
            convs: config
                .channels
                .windows(2)
                .enumerate()
                .map(|(i, w)| Conv2d::init(init, &format!("conv{i}"), w[0], w[1], 3, 1, 1))
                .collect(),
        })
    }

    pub fn with_seed<T: Scalar>(config: &DecoderConfig, seed: u64) -> (Self, ParamStore<T>) {
        let mut store = ParamStore::new();
        let mut rng = stream(seed, &[]);
        let dec = Self::init(config, &mut ParamInit::new(&mut store, &mut rng));
        (dec, store)
    }

    /// `[1, in_dim]` to `[1, side, side]` in `(0, 1)`.
    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(sess, x)?;
        let h = sess.tape.relu(h);
        let h = self.fc2.forward(sess, h)?;
        let h = sess.tape.relu(h);
        let s = self.config.seed_side;
        let mut h = sess.tape.reshape(h, &[self.config.channels[0], s, s])?;
        for (i, conv) in self.convs.iter().enumerate() {
            h = sess.tape.upsample2x(h)?;
            h = conv.forward(sess, h)?;
            if i + 1 < self.convs.len() {
                h = sess.tape.relu(h);
            }
        }
        Ok(sess.tape.sigmoid(h))
    }

    pub fn predict(&self, store: &ParamStore<f32>, embedding: &[f32]) -> Result<Vec<f32>> {
        let mut sess = Session::inference(store);
        let x = sess.tape.constant(Tensor::new(vec![1, embedding.len()], embedding.to_vec())?);
        let y = self.forward(&mut sess, x)?;
        Ok(sess.tape.value(y).data().to_vec())
    }
}

/// Decoder inputs and targets.
pub type Pairs = (Vec<Vec<f32>>, Vec<Vec<f32>>);

/// Embeddings of every image with the target channel removed, and the
/// target channels themselves. The encoder is only read.
pub fn reconstruction_pairs(
    backbone: &Backbone,
    encoder_store: &ParamStore<f32>,
    images: &[MultiChannelImage],
    target: usize,
) -> Result<Pairs> {
    let mut inputs = Vec::with_capacity(images.len());
    let mut targets = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        if img.channels() < 2 {
            return Err(Error::invalid(format!(
                "image {i} has a single channel; reconstruction needs at least two"
            )));
        }
        if target >= img.channels() {
            return Err(Error::ChannelIndex {
                index: target,
                max: img.channels(),
            });
        }
        inputs.push(backbone.encode(encoder_store, &img.without_channel(target)?)?.0);
        targets.push(img.channel(target).to_vec());
    }
    Ok((inputs, targets))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DecoderTrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 1e-3,
            batch_size: 8,
            seed: 0,
        }
    }
}

pub struct TrainedDecoder {
    pub decoder: ChannelDecoder,
    pub store: ParamStore<f32>,
    /// Mean batch loss per step.
    pub losses: Vec<f64>,
}

fn mse_loss(sess: &mut Session<'_, f32>, pred: Var, target: &[f32]) -> Result<Var> {
    let shape = sess.tape.shape(pred).to_vec();
    let t = sess.tape.constant(Tensor::new(shape, target.to_vec())?);
    let diff = sess.tape.sub(pred, t)?;
    let sq = sess.tape.mul(diff, diff)?;
    Ok(sess.tape.mean(sq))
}

/// Fits a decoder to `(embedding, target channel)` pairs with AdamW (no
/// weight decay) on the mean squared error.
pub fn train_channel_decoder(
    inputs: &[Vec<f32>],
    targets: &[Vec<f32>],
    config: &DecoderConfig,
    train: &DecoderTrainConfig,
) -> Result<TrainedDecoder> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::invalid("decoder needs matching, non-empty inputs and targets"));
    }
    let side = config.out_side();
    for (x, t) in inputs.iter().zip(targets) {
        if x.len() != config.in_dim {
            return Err(Error::WidthMismatch {
                left: config.in_dim,
                right: x.len(),
            });
        }
        if t.len() != side * side {
            return Err(Error::invalid(format!(
                "target of {} pixels does not match the decoder's {side}x{side} output",
                t.len()
            )));
        }
    }
    let (decoder, mut store) = ChannelDecoder::with_seed::<f32>(config, train.seed);
    let mut opt = AdamW::new(
        AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        },
        &store,
    );
    let bs = train.batch_size.clamp(1, inputs.len());
    let mut losses = Vec::with_capacity(train.steps);
    for step in 0..train.steps {
        let start = (step * bs) % inputs.len();
        let batch: Vec<usize> = (0..bs).map(|k| (start + k) % inputs.len()).collect();
        let mut grads = Grads::zeros_like(&store);
        let mut loss_sum = 0.0;
        for &i in &batch {
            let mut sess = Session::train(&store);
            let x = sess.tape.constant(Tensor::new(vec![1, config.in_dim], inputs[i].clone())?);
            let y = decoder.forward(&mut sess, x)?;
            let loss = mse_loss(&mut sess, y, &targets[i])?;
            sess.tape.backward(loss)?;
            loss_sum += sess.tape.value(loss).data()[0] as f64;
            grads.add_scaled(&sess.param_grads(), 1.0 / bs as f32);
        }
        let loss = loss_sum / bs as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("decoder loss at step {step}")));
        }
        losses.push(loss);
        opt.step(&mut store, &grads, train.lr)?;
    }
    Ok(TrainedDecoder { decoder, store, losses })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionMetrics {
    pub r2: f64,
    pub mse: f64,
    pub mae: f64,
}

/// Metrics over all pixels of all targets.
pub fn evaluate_decoder(trained: &TrainedDecoder, inputs: &[Vec<f32>], targets: &[Vec<f32>]) -> Result<ReconstructionMetrics> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (x, t) in inputs.iter().zip(targets) {
        pred.extend(trained.decoder.predict(&trained.store, x)?.into_iter().map(|v| v as f64));
        truth.extend(t.iter().map(|&v| v as f64));
    }
    Ok(ReconstructionMetrics {
        r2: compute_metrics(&pred, &truth, MetricKind::R2)?,
        mse: compute_metrics(&pred, &truth, MetricKind::Mse)?,
        mae: compute_metrics(&pred, &truth, MetricKind::Mae)?,
    })
}
