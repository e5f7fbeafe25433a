use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Final state of the prepended class token.
    #[default]
    Cls,
    /// Mean over the final states of all real (unpadded) patch tokens.
    Mean,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cls" => Ok(Pooling::Cls),
            "mean" => Ok(Pooling::Mean),
            other => Err(Error::invalid(format!("unknown pooling {other:?} (expected cls or mean)"))),
        }
    }
}

/// Hyperparameters of a token encoder. The defaults are the 192-wide,
/// 12-block, 10-channel configuration on 224x224 images with 16x16 patches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub patch_size: usize,
    pub max_channels: usize,
    pub image_size: usize,
    pub pooling: Pooling,
    /// Learnable per-channel-slot embedding added to every patch token.
    pub channel_embedding: bool,
    pub layer_norm_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 192,
            depth: 12,
            heads: 3,
            mlp_ratio: 4,
            patch_size: 16,
            max_channels: 10,
            image_size: 224,
            pooling: Pooling::Cls,
            channel_embedding: true,
            layer_norm_eps: 1e-6,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!("dim {} must be a positive multiple of heads {}", self.dim, self.heads));
        }
        if self.patch_size == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return bad(format!(
                "image size {} must be a positive multiple of patch size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.max_channels == 0 {
            return bad("max_channels must be at least 1".into());
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be at least 1".into());
        }
        if self.layer_norm_eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return bad("layer_norm_eps must be positive".into());
        }
        Ok(())
    }

    /// Patches per channel, `(side / p)^2`.
    pub fn patches_per_channel(&self) -> usize {
        let g = self.grid_side();
        g * g
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Total tokens fed to the transformer: class token plus a full block of
    /// patch tokens for every channel slot.
    pub fn sequence_len(&self) -> usize {
        1 + self.max_channels * self.patches_per_channel()
    }

    pub fn mlp_hidden(&self) -> usize {
        self.dim * self.mlp_ratio
    }

    /// Configuration of the per-channel comparison ViT: one channel slot and
    /// no channel table, everything else shared.
    pub fn single_channel(&self) -> Self {
        Self {
            max_channels: 1,
            channel_embedding: false,
            ..self.clone()
        }
    }
}
