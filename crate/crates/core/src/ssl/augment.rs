//! View sampling. One geometric transform is drawn per view and applied to
//! every channel; intensity jitter is drawn per channel.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::MultiChannelImage;
use crate::io::resize::{resample_channel, Region};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationPolicy {
    /// Range of the crop area as a fraction of the image.
    pub crop_scale: (f64, f64),
    /// Range of the crop aspect ratio (height / width).
    pub crop_ratio: (f64, f64),
    pub flips: bool,
    /// Multiplicative gain drawn from `1 ± gain_jitter`.
    pub gain_jitter: f64,
    /// Additive offset drawn from `± offset_jitter`.
    pub offset_jitter: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            crop_scale: (0.5, 1.0),
            crop_ratio: (0.75, 4.0 / 3.0),
            flips: true,
            gain_jitter: 0.2,
            offset_jitter: 0.05,
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!("crop_scale ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1")));
        }
        let (lo, hi) = self.crop_ratio;
        if !(0.0 < lo && lo <= hi) {
            return Err(Error::invalid(format!("crop_ratio ({lo}, {hi}) must satisfy 0 < lo <= hi")));
        }
        if !(0.0..1.0).contains(&self.gain_jitter) || self.offset_jitter < 0.0 {
            return Err(Error::invalid("jitter amplitudes must be non-negative and gain_jitter < 1"));
        }
        Ok(())
    }
}

/// A sampled view: crop region, flips and per-channel `(gain, offset)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewTransform {
    pub region: Region,
    pub hflip: bool,
    pub vflip: bool,
    pub jitter: Vec<(f32, f32)>,
}

impl ViewTransform {
    pub fn identity(channels: usize, height: usize, width: usize) -> Self {
        Self {
            region: Region::full(height, width),
            hflip: false,
            vflip: false,
            jitter: vec![(1.0, 0.0); channels],
        }
    }

    pub fn sample<R: Rng>(policy: &AugmentationPolicy, rng: &mut R, channels: usize, height: usize, width: usize) -> Self {
        let area = rng.gen_range(policy.crop_scale.0..=policy.crop_scale.1);
        let log_ratio = rng.gen_range(policy.crop_ratio.0.ln()..=policy.crop_ratio.1.ln());
        let ratio = log_ratio.exp();
        let (h, w) = (height as f64, width as f64);
        let ch = ((area * ratio).sqrt() * h).min(h);
        let cw = ((area / ratio).sqrt() * w).min(w);
        let top = rng.gen_range(0.0..=h - ch);
        let left = rng.gen_range(0.0..=w - cw);
        let (hflip, vflip) = if policy.flips {
            (rng.gen_bool(0.5), rng.gen_bool(0.5))
        } else {
            (false, false)
        };
        let jitter = (0..channels)
            .map(|_| {
                let g = 1.0 + rng.gen_range(-policy.gain_jitter..=policy.gain_jitter);
                let o = rng.gen_range(-policy.offset_jitter..=policy.offset_jitter);
                (g as f32, o as f32)
            })
            .collect();
        Self {
            region: Region {
                top,
                left,
                height: ch,
                width: cw,
            },
            hflip,
            vflip,
            jitter,
        }
    }

    /// Crop, resize back to `height x width` and flip one channel.
    pub fn geometric(&self, channel: &[f32], height: usize, width: usize) -> Vec<f32> {
        let plane = resample_channel(channel, height, width, self.region, height, width);
        let mut out = vec![0.0; plane.len()];
        for y in 0..height {
            let sy = if self.vflip { height - 1 - y } else { y };
            for x in 0..width {
                let sx = if self.hflip { width - 1 - x } else { x };
                out[y * width + x] = plane[sy * width + sx];
            }
        }
        out
    }

    pub fn apply(&self, image: &MultiChannelImage) -> Result<MultiChannelImage> {
        if self.jitter.len() != image.channels() {
            return Err(Error::ChannelCount {
                count: image.channels(),
                max: self.jitter.len(),
            });
        }
        let (h, w) = (image.height(), image.width());
        let mut pixels = Vec::with_capacity(image.pixels().len());
        for c in 0..image.channels() {
            let (g, o) = self.jitter[c];
            pixels.extend(self.geometric(image.channel(c), h, w).into_iter().map(|v| (v * g + o).clamp(0.0, 1.0)));
        }
        MultiChannelImage::new(h, w, pixels, image.channel_names().to_vec())
    }
}
