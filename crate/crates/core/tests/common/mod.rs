#![allow(dead_code)]

use chada_core::autodiff::{check_store_gradients, GradCheck, ParamStore, Session};
use chada_core::model::{Arch, EncoderConfig};
use chada_core::rng::stream;
use chada_core::ssl::{dino_loss_on_tape, teacher_targets, DinoConfig, DinoModel};
use chada_core::{MultiChannelImage, Result, Tensor};
use rand::Rng;

pub fn image(n: usize, side: usize, seed: u64) -> MultiChannelImage {
    let mut rng = stream(seed, &[]);
    let chans: Vec<Vec<f32>> = (0..n).map(|_| (0..side * side).map(|_| rng.gen()).collect()).collect();
    MultiChannelImage::from_channels(side, side, &chans).unwrap()
}

/// The 64-wide, 4-block setup used for the short pretraining runs.
pub fn toy_encoder() -> EncoderConfig {
    EncoderConfig {
        dim: 64,
        depth: 4,
        heads: 4,
        mlp_ratio: 4,
        patch_size: 8,
        max_channels: 3,
        image_size: 32,
        ..Default::default()
    }
}

pub fn toy_dino(max_steps: u64) -> DinoConfig {
    DinoConfig {
        batch_size: 32,
        max_steps: Some(max_steps),
        ..Default::default()
    }
}

/// Central differences against backprop for the distillation loss of a small
/// encoder plus head, in f64. Teacher targets are fixed random
/// distributions, so only the student path is differentiated.
pub fn dino_gradient_check(per_param: usize) -> Result<(GradCheck, usize)> {
    let enc = EncoderConfig {
        dim: 8,
        depth: 2,
        heads: 2,
        mlp_ratio: 2,
        patch_size: 16,
        max_channels: 3,
        image_size: 32,
        ..Default::default()
    };
    let dino = DinoConfig {
        out_dim: 12,
        hidden_dim: 10,
        bottleneck_dim: 6,
        ..Default::default()
    };
    let (model, store) = DinoModel::init::<f64>(Arch::Chada, &enc, &dino, 11)?;
    let views = [image(3, 32, 1), image(2, 32, 2)];
    let mut rng = stream(3, &[]);
    let raw: Vec<Tensor<f64>> = (0..2)
        .map(|_| Tensor::new(vec![1, 12], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let targets = teacher_targets(&raw, &[0.0; 12], 0.5)?;
    let loss_and_grads = |store: &ParamStore<f64>, grads: bool| -> Result<(f64, Option<chada_core::autodiff::Grads<f64>>)> {
        let mut sess = Session::train(store);
        let logits = views.iter().map(|v| model.logits(&mut sess, v)).collect::<Result<Vec<_>>>()?;
        let loss = dino_loss_on_tape(&mut sess.tape, &logits, &targets, dino.student_temp)?;
        let value = sess.tape.value(loss).data()[0];
        if !grads {
            return Ok((value, None));
        }
        sess.tape.backward(loss)?;
        Ok((value, Some(sess.param_grads())))
    };
    let (_, analytic) = loss_and_grads(&store, true)?;
    let analytic = analytic.unwrap();
    let report = check_store_gradients(|s| Ok(loss_and_grads(s, false)?.0), &store, &analytic, 1e-5, per_param, 7)?;
    Ok((report, store.len()))
}
