//! Turns a variable-channel image into the fixed-length, masked token
//! sequence consumed by the encoder.
//!
//! Every channel is cut into the same `p x p` grid. All patches of all
//! channels go through one shared linear projection, then receive the
//! positional row of their grid cell (shared across channels) and the
//! channel row of their channel slot (shared across the grid). Missing
//! channel slots are filled with zero tokens that the mask marks as padding,
//! and a class token is prepended.

use rand::Rng;

use crate::autodiff::{ParamId, ParamInit, ParamStore, Session, Var};
use crate::error::{Error, Result};
use crate::image::MultiChannelImage;
use crate::model::EncoderConfig;
use crate::tensor::{matmul, Scalar, Tensor};

/// One `p x p` block of one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub channel: usize,
    /// Grid row.
    pub row: usize,
    /// Grid column.
    pub col: usize,
    /// Row-major pixel block.
    pub values: Vec<f32>,
}

/// Splits a channel into non-overlapping patches in row-major grid order.
pub fn patchify_channel(channel: &[f32], height: usize, width: usize, p: usize, channel_index: usize) -> Result<Vec<Patch>> {
    if p == 0 || !height.is_multiple_of(p) || !width.is_multiple_of(p) {
        return Err(Error::NotDivisible { height, width, patch: p });
    }
    if channel.len() != height * width {
        return Err(Error::invalid(format!(
            "channel has {} values, expected {height}x{width}",
            channel.len()
        )));
    }
    let (gh, gw) = (height / p, width / p);
    let mut out = Vec::with_capacity(gh * gw);
    for row in 0..gh {
        for col in 0..gw {
            let mut values = Vec::with_capacity(p * p);
            for y in 0..p {
                let start = (row * p + y) * width + col * p;
                values.extend_from_slice(&channel[start..start + p]);
            }
            out.push(Patch {
                channel: channel_index,
                row,
                col,
                values,
            });
        }
    }
    Ok(out)
}

/// Inverse of [`patchify_channel`].
pub fn assemble_channel(patches: &[Patch], height: usize, width: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0; height * width];
    for patch in patches {
        for y in 0..p {
            let start = (patch.row * p + y) * width + patch.col * p;
            out[start..start + p].copy_from_slice(&patch.values[y * p..(y + 1) * p]);
        }
    }
    out
}

/// Flattened patches of every channel, channel-major then grid-row-major:
/// a `[n * m, p * p]` matrix.
pub fn patch_matrix<T: Scalar>(image: &MultiChannelImage, p: usize) -> Result<Tensor<T>> {
    let (h, w) = (image.height(), image.width());
    let mut data = Vec::with_capacity(image.pixels().len());
    let mut rows = 0;
    for c in 0..image.channels() {
        for patch in patchify_channel(image.channel(c), h, w, p, c)? {
            data.extend(patch.values.iter().map(|&v| T::lit(v as f64)));
            rows += 1;
        }
    }
    Tensor::new(vec![rows, p * p], data)
}

/// Learnable tables of the tokenizer, as ids into a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct EmbeddingTables {
    /// `[p*p, dim]`; equivalent to a stride-p, kernel-p convolution with one
    /// input channel.
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    /// `[patches_per_channel, dim]`
    pub pos: ParamId,
    /// `[max_channels, dim]`, absent when channel embeddings are disabled.
    pub chan: Option<ParamId>,
    /// `[1, dim]`
    pub cls: ParamId,
}

impl EmbeddingTables {
    pub fn init<T: Scalar, R: Rng>(config: &EncoderConfig, init: &mut ParamInit<'_, T, R>) -> Self {
        let (d, p2) = (config.dim, config.patch_size * config.patch_size);
        Self {
            proj_w: init.trunc_normal("patch_proj.weight", &[p2, d], 0.02),
            proj_b: init.constant("patch_proj.bias", &[d], 0.0),
            pos: init.trunc_normal("pos_embed", &[config.patches_per_channel(), d], 0.02),
            chan: config
                .channel_embedding
                .then(|| init.trunc_normal("chan_embed", &[config.max_channels, d], 0.02)),
            cls: init.trunc_normal("cls_token", &[1, d], 0.02),
        }
    }
}

/// Encoder input: `[1 + max_channels * m, dim]` tokens and the key-padding
/// mask (`true` = real token).
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence<T: Scalar = f32> {
    pub tokens: Tensor<T>,
    pub mask: Vec<bool>,
    pub n_channels: usize,
}

/// Mask for `n` real channels: class token, `n * m` real patch tokens, then
/// padding.
pub fn key_padding_mask(config: &EncoderConfig, n: usize) -> Vec<bool> {
    let m = config.patches_per_channel();
    let mut mask = vec![false; config.sequence_len()];
    mask[..1 + n * m].fill(true);
    mask
}

/// Applies the shared projection to a `[rows, p*p]` patch matrix.
pub fn project_patches<T: Scalar>(patches: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = matmul(patches, weight)?;
    let d = bias.numel();
    if out.dims2().1 != d {
        return Err(Error::ShapeMismatch {
            op: "project_patches",
            left: out.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    for row in out.data_mut().chunks_mut(d) {
        for (o, &b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(out)
}

/// `token(x, y) + pos[x, y] + chan[c]` for one channel's `[m, dim]` block.
pub fn add_embeddings<T: Scalar>(tokens: &Tensor<T>, channel: usize, pos: &Tensor<T>, chan: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    if tokens.shape() != pos.shape() {
        return Err(Error::ShapeMismatch {
            op: "add_embeddings",
            left: tokens.shape().to_vec(),
            right: pos.shape().to_vec(),
        });
    }
    let d = tokens.dims2().1;
    let chan_row = match chan {
        Some(table) => {
            let rows = table.dims2().0;
            if channel >= rows {
                return Err(Error::ChannelIndex { index: channel, max: rows });
            }
            Some(table.row(channel))
        }
        None => None,
    };
    let mut out = tokens.clone();
    for (r, row) in out.data_mut().chunks_mut(d).enumerate() {
        for j in 0..d {
            row[j] += pos.data()[r * d + j];
            if let Some(c) = chan_row {
                row[j] += c[j];
            }
        }
    }
    Ok(out)
}

/// Concatenates per-channel token blocks and appends zero padding up to
/// `max_channels` blocks. Returns the `[max_channels * m, dim]` tokens and
/// their mask (no class token yet).
pub fn pad_and_mask<T: Scalar>(blocks: &[Tensor<T>], config: &EncoderConfig) -> Result<(Tensor<T>, Vec<bool>)> {
    let n = blocks.len();
    if n == 0 || n > config.max_channels {
        return Err(Error::ChannelCount {
            count: n,
            max: config.max_channels,
        });
    }
    let (m, d) = (config.patches_per_channel(), config.dim);
    let mut data = Vec::with_capacity(config.max_channels * m * d);
    for b in blocks {
        if b.shape() != [m, d] {
            return Err(Error::ShapeMismatch {
                op: "pad_and_mask",
                left: b.shape().to_vec(),
                right: vec![m, d],
            });
        }
        data.extend_from_slice(b.data());
    }
    data.resize(config.max_channels * m * d, T::zero());
    let mut mask = vec![false; config.max_channels * m];
    mask[..n * m].fill(true);
    Ok((Tensor::new(vec![config.max_channels * m, d], data)?, mask))
}

fn check_image(image: &MultiChannelImage, config: &EncoderConfig) -> Result<()> {
    let n = image.channels();
    if n == 0 || n > config.max_channels {
        return Err(Error::ChannelCount {
            count: n,
            max: config.max_channels,
        });
    }
    if image.height() != config.image_size || image.width() != config.image_size {
        return Err(Error::invalid(format!(
            "image is {}x{}, encoder expects {side}x{side} (resize on ingestion)",
            image.height(),
            image.width(),
            side = config.image_size
        )));
    }
    Ok(())
}

/// Records the tokenizer on `sess`: returns the `[sequence_len, dim]` token
/// variable and its mask.
pub fn embed_tokens<T: Scalar>(
    sess: &mut Session<'_, T>,
    tables: &EmbeddingTables,
    image: &MultiChannelImage,
    config: &EncoderConfig,
) -> Result<(Var, Vec<bool>)> {
    check_image(image, config)?;
    let n = image.channels();
    let (m, d) = (config.patches_per_channel(), config.dim);
    let x = sess.tape.constant(patch_matrix(image, config.patch_size)?);
    let (w, b) = (sess.p(tables.proj_w), sess.p(tables.proj_b));
    let projected = sess.tape.matmul(x, w)?;
    let projected = sess.tape.add_row(projected, b)?;

    let pos_index: Vec<usize> = (0..n).flat_map(|_| 0..m).collect();
    let pos_table = sess.p(tables.pos);
    let pos = sess.tape.gather_rows(pos_table, &pos_index)?;
    let mut tokens = sess.tape.add(projected, pos)?;
    if let Some(chan) = tables.chan {
        let chan_index: Vec<usize> = (0..n).flat_map(|c| std::iter::repeat_n(c, m)).collect();
        let chan_table = sess.p(chan);
        let chan = sess.tape.gather_rows(chan_table, &chan_index)?;
        tokens = sess.tape.add(tokens, chan)?;
    }

    let cls = sess.p(tables.cls);
    let mut parts = vec![cls, tokens];
    let pad_rows = (config.max_channels - n) * m;
    if pad_rows > 0 {
        parts.push(sess.tape.constant(Tensor::zeros(&[pad_rows, d])));
    }
    let seq = sess.tape.concat_rows(&parts)?;
    Ok((seq, key_padding_mask(config, n)))
}

/// Builds the full token sequence of `image` without recording gradients.
pub fn build_sequence<T: Scalar>(
    image: &MultiChannelImage,
    store: &ParamStore<T>,
    tables: &EmbeddingTables,
    config: &EncoderConfig,
) -> Result<TokenSequence<T>> {
    let mut sess = Session::inference(store);
    let (seq, mask) = embed_tokens(&mut sess, tables, image, config)?;
    Ok(TokenSequence {
        tokens: sess.tape.value(seq).clone(),
        mask,
        n_channels: image.channels(),
    })
}
