//! Synthetic datasets that isolate one property each.
//!
//! * `interchannel-xor`: every channel independently holds a Gaussian blob
//!   or only noise; the label is the parity of the blob count, so no single
//!   channel says anything about it.
//! * `intrachannel-shape`: channel 0 holds a disk, square or cross (the
//!   label); the other channels hold distractor blobs.
//! * `reconstruction`: the last channel is a blurred, offset copy of the mean
//!   of the others.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Label, Split, TaskKind};
use crate::error::{Error, Result};
use crate::image::MultiChannelImage;
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    InterchannelXor,
    IntrachannelShape,
    Reconstruction,
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interchannel-xor" => Ok(Self::InterchannelXor),
            "intrachannel-shape" => Ok(Self::IntrachannelShape),
            "reconstruction" => Ok(Self::Reconstruction),
            other => Err(Error::invalid(format!(
                "unknown dataset kind {other:?} (expected interchannel-xor, intrachannel-shape or reconstruction)"
            ))),
        }
    }
}

const NOISE: f32 = 0.08;

/// Held-out split: every fourth image.
pub fn split_of(index: usize) -> Split {
    if index % 4 == 3 {
        Split::Test
    } else {
        Split::Train
    }
}

fn noise_plane<R: Rng>(rng: &mut R, side: usize) -> Vec<f32> {
    (0..side * side).map(|_| rng.gen_range(0.0..NOISE)).collect()
}

fn add_blob<R: Rng>(rng: &mut R, plane: &mut [f32], side: usize) {
    let s = side as f32;
    let (cy, cx) = (rng.gen_range(0.25 * s..0.75 * s), rng.gen_range(0.25 * s..0.75 * s));
    let sigma = rng.gen_range(2.5..4.0) * s / 32.0;
    let amp = rng.gen_range(0.6..0.9f32);
    for y in 0..side {
        for x in 0..side {
            let d2 = (y as f32 + 0.5 - cy).powi(2) + (x as f32 + 0.5 - cx).powi(2);
            let v = &mut plane[y * side + x];
            *v = (*v + amp * (-d2 / (2.0 * sigma * sigma)).exp()).min(1.0);
        }
    }
}

fn add_shape<R: Rng>(rng: &mut R, plane: &mut [f32], side: usize, shape: usize) {
    let s = side as f32;
    let r = rng.gen_range(0.15 * s..0.25 * s);
    let (cy, cx) = (rng.gen_range(r..s - r), rng.gen_range(r..s - r));
    let amp = rng.gen_range(0.6..0.9f32);
    let arm = (r / 3.0).max(1.0);
    for y in 0..side {
        for x in 0..side {
            let (dy, dx) = ((y as f32 + 0.5 - cy).abs(), (x as f32 + 0.5 - cx).abs());
            let inside = match shape {
                0 => dy * dy + dx * dx <= r * r,
                1 => dy <= r * 0.8 && dx <= r * 0.8,
                _ => (dy <= arm && dx <= r) || (dx <= arm && dy <= r),
            };
            if inside {
                let v = &mut plane[y * side + x];
                *v = (*v + amp).min(1.0);
            }
        }
    }
}

fn box_blur(plane: &[f32], side: usize, radius: usize) -> Vec<f32> {
    let r = radius as isize;
    let mut out = vec![0.0; plane.len()];
    for y in 0..side as isize {
        for x in 0..side as isize {
            let (mut acc, mut n) = (0.0, 0.0);
            for yy in (y - r).max(0)..=(y + r).min(side as isize - 1) {
                for xx in (x - r).max(0)..=(x + r).min(side as isize - 1) {
                    acc += plane[(yy * side as isize + xx) as usize];
                    n += 1.0;
                }
            }
            out[(y * side as isize + x) as usize] = acc / n;
        }
    }
    out
}

/// Which channels of an interchannel-xor image carry a blob; also the
/// per-image draw used by [`generate_synthetic`].
fn xor_image(seed: u64, index: usize, channels: usize, side: usize) -> (Vec<Vec<f32>>, Vec<bool>) {
    let mut rng = stream(seed, &[0, index as u64]);
    let present: Vec<bool> = (0..channels).map(|_| rng.gen_bool(0.5)).collect();
    let planes = present
        .iter()
        .map(|&p| {
            let mut plane = noise_plane(&mut rng, side);
            if p {
                add_blob(&mut rng, &mut plane, side);
            }
            plane
        })
        .collect();
    (planes, present)
}

/// Blob-presence vectors of an interchannel-xor dataset (the oracle features).
pub fn xor_presence(count: usize, channels: usize, seed: u64) -> Vec<Vec<bool>> {
    (0..count)
        .map(|i| {
            let mut rng = stream(seed, &[0, i as u64]);
            (0..channels).map(|_| rng.gen_bool(0.5)).collect()
        })
        .collect()
}

/// Pure function of its arguments. `side` is the image side in pixels.
pub fn generate_synthetic(kind: SyntheticKind, count: usize, channels: usize, side: usize, seed: u64) -> Result<Dataset> {
    let min_channels = match kind {
        SyntheticKind::IntrachannelShape => 1,
        _ => 2,
    };
    if channels < min_channels || channels > super::mcif::MAX_CHANNELS {
        return Err(Error::invalid(format!(
            "{kind:?} needs between {min_channels} and 255 channels, got {channels}"
        )));
    }
    if side < 8 {
        return Err(Error::invalid(format!("image side {side} too small (minimum 8)")));
    }
    let names: Vec<String> = (0..channels).map(|c| format!("ch{c}")).collect();
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let (planes, label) = match kind {
            SyntheticKind::InterchannelXor => {
                let (planes, present) = xor_image(seed, i, channels, side);
                let parity = present.iter().filter(|&&p| p).count() % 2;
                (planes, Label::Class(parity))
            }
            SyntheticKind::IntrachannelShape => {
                let mut rng = stream(seed, &[1, i as u64]);
                let shape = rng.gen_range(0..3);
                let mut planes = Vec::with_capacity(channels);
                let mut first = noise_plane(&mut rng, side);
                add_shape(&mut rng, &mut first, side, shape);
                planes.push(first);
                for _ in 1..channels {
                    let mut plane = noise_plane(&mut rng, side);
                    if rng.gen_bool(0.5) {
                        add_blob(&mut rng, &mut plane, side);
                    }
                    planes.push(plane);
                }
                (planes, Label::Class(shape))
            }
            SyntheticKind::Reconstruction => {
                let mut rng = stream(seed, &[2, i as u64]);
                let mut planes: Vec<Vec<f32>> = (0..channels - 1)
                    .map(|_| {
                        let mut plane = noise_plane(&mut rng, side);
                        for _ in 0..rng.gen_range(1..=2) {
                            add_blob(&mut rng, &mut plane, side);
                        }
                        plane
                    })
                    .collect();
                let mean: Vec<f32> = (0..side * side)
                    .map(|p| planes.iter().map(|pl| pl[p]).sum::<f32>() / (channels - 1) as f32)
                    .collect();
                let target: Vec<f32> = box_blur(&mean, side, (side / 16).max(1))
                    .into_iter()
                    .map(|v| (0.8 * v + 0.1).clamp(0.0, 1.0))
                    .collect();
                let avg = target.iter().map(|&v| v as f64).sum::<f64>() / target.len() as f64;
                planes.push(target);
                (planes, Label::Value(avg))
            }
        };
        images.push(MultiChannelImage::new(side, side, planes.concat(), names.clone())?);
        labels.push(label);
    }
    let (task, target_channel) = match kind {
        SyntheticKind::Reconstruction => (TaskKind::Reconstruction, Some(channels - 1)),
        _ => (TaskKind::Classification, None),
    };
    Ok(Dataset {
        task,
        target_channel,
        images,
        labels,
        splits: (0..count).map(split_of).collect(),
    })
}
