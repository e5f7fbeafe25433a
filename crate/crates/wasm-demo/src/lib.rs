//! Browser bindings for the demo page in `www/`.
//!
//! A small randomly initialized channel-adaptive encoder runs entirely in the
//! page: token/mask layout for a chosen channel count, class-token attention
//! heatmaps on a synthetic image, and a joint PCA of two synthetic datasets
//! with different channel counts.

use chada_core::autodiff::ParamStore;
use chada_core::eval::{joint_space_analysis, JointInput};
use chada_core::io::synth::{generate_synthetic, SyntheticKind};
use chada_core::model::{ChadaEncoder, EncoderConfig};
use chada_core::tokenizer::key_padding_mask;
use chada_core::{Error, MultiChannelImage, Result};
use wasm_bindgen::prelude::*;

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// The demo model without any JavaScript types, so it also runs natively.
pub struct Explorer {
    pub config: EncoderConfig,
    encoder: ChadaEncoder,
    store: ParamStore<f32>,
}

impl Explorer {
    /// 32x32 images, 8x8 patches, up to 5 channels, two 32-wide blocks.
    pub fn new(seed: u64) -> Result<Self> {
        let config = EncoderConfig {
            dim: 32,
            depth: 2,
            heads: 2,
            mlp_ratio: 2,
            patch_size: 8,
            max_channels: 5,
            image_size: 32,
            ..Default::default()
        };
        let (encoder, store) = ChadaEncoder::with_seed(&config, seed)?;
        Ok(Self { config, encoder, store })
    }

    pub fn token_mask(&self, n_channels: usize) -> Result<Vec<u8>> {
        if n_channels == 0 || n_channels > self.config.max_channels {
            return Err(Error::ChannelCount {
                count: n_channels,
                max: self.config.max_channels,
            });
        }
        Ok(key_padding_mask(&self.config, n_channels).into_iter().map(u8::from).collect())
    }

    pub fn image(&self, kind: &str, n_channels: usize, seed: u64) -> Result<MultiChannelImage> {
        let ds = generate_synthetic(kind.parse()?, 1, n_channels, self.config.image_size, seed)?;
        Ok(ds.images.into_iter().next().expect("one image requested"))
    }

    pub fn attention(&self, kind: &str, n_channels: usize, seed: u64, layer: usize, head: usize) -> Result<Vec<f32>> {
        let img = self.image(kind, n_channels, seed)?;
        let maps = self.encoder.attention_maps(&self.store, &img, layer)?;
        if head >= maps.heads {
            return Err(Error::InvalidArgument(format!("head {head} out of range for {} heads", maps.heads)));
        }
        Ok(maps.cls_heatmaps(head).concat())
    }

    pub fn joint_pca(&self, count: usize, seed: u64) -> Result<Vec<f64>> {
        let side = self.config.image_size;
        let a = generate_synthetic(SyntheticKind::IntrachannelShape, count, 3, side, seed)?;
        let b = generate_synthetic(SyntheticKind::InterchannelXor, count, 5, side, seed + 1)?;
        let embed = |imgs: &[MultiChannelImage]| -> Result<Vec<Vec<f64>>> {
            imgs.iter()
                .map(|im| Ok(self.encoder.encode(&self.store, im)?.0.into_iter().map(f64::from).collect()))
                .collect()
        };
        let (ea, eb) = (embed(&a.images)?, embed(&b.images)?);
        let la: Vec<f64> = a.labels.iter().map(|l| l.value()).collect();
        let lb: Vec<f64> = b.labels.iter().map(|l| l.value()).collect();
        let joint = joint_space_analysis(
            JointInput { name: "shape-3ch", embeddings: &ea, labels: &la },
            JointInput { name: "xor-5ch", embeddings: &eb, labels: &lb },
            2,
        )?;
        let mut out = Vec::with_capacity(3 * joint.rows.len() + 1);
        for r in &joint.rows {
            out.extend([r.pcs[0], r.pcs[1], if r.dataset == "xor-5ch" { 1.0 } else { 0.0 }]);
        }
        out.push(joint.pc1_accuracy);
        Ok(out)
    }
}

#[wasm_bindgen]
pub struct Demo(Explorer);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> std::result::Result<Demo, JsError> {
        Explorer::new(seed as u64).map(Demo).map_err(js)
    }

    pub fn max_channels(&self) -> usize {
        self.0.config.max_channels
    }

    pub fn grid_side(&self) -> usize {
        self.0.config.grid_side()
    }

    pub fn depth(&self) -> usize {
        self.0.config.depth
    }

    pub fn heads(&self) -> usize {
        self.0.config.heads
    }

    pub fn image_size(&self) -> usize {
        self.0.config.image_size
    }

    /// One byte per sequence position, 1 for a real token. Position 0 is the
    /// class token; channel slot `c` owns positions `1 + c*m .. 1 + (c+1)*m`.
    pub fn token_mask(&self, n_channels: usize) -> std::result::Result<Vec<u8>, JsError> {
        self.0.token_mask(n_channels).map_err(js)
    }

    /// Channel planes of a synthetic image, concatenated.
    pub fn sample_image(&self, kind: &str, n_channels: usize, seed: u32) -> std::result::Result<Vec<f32>, JsError> {
        Ok(self.0.image(kind, n_channels, seed as u64).map_err(js)?.pixels().to_vec())
    }

    /// Class-token attention of one head over every patch of every channel,
    /// as `n_channels` concatenated `grid x grid` planes.
    pub fn attention(
        &self,
        kind: &str,
        n_channels: usize,
        seed: u32,
        layer: usize,
        head: usize,
    ) -> std::result::Result<Vec<f32>, JsError> {
        self.0.attention(kind, n_channels, seed as u64, layer, head).map_err(js)
    }

    /// `count` 3-channel shape images and `count` 5-channel parity images on
    /// the first two joint principal axes: `[pc1, pc2, dataset]` triples,
    /// then the accuracy of the best PC1 threshold between the datasets.
    pub fn joint_pca(&self, count: usize, seed: u32) -> std::result::Result<Vec<f64>, JsError> {
        self.0.joint_pca(count, seed as u64).map_err(js)
    }
}
