//! File formats, datasets and image ingestion.

pub mod checkpoint;
pub mod dataset;
pub mod mcif;
pub mod pgm;
pub mod resize;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, RngState};
pub use dataset::{Dataset, DatasetManifest, Label, ManifestItem, Split, TaskKind};
pub use mcif::{read_mcif, write_mcif, McifError};
pub use resize::resize_bilinear;
pub use synth::{generate_synthetic, SyntheticKind};

use crate::image::MultiChannelImage;

/// Brings a stored image to the encoder's input form: channels whose values
/// leave `[0, 1]` are min-max normalized, then the image is resized to
/// `side x side` if needed. Channels already in range keep their absolute
/// intensities.
pub fn ingest(mut image: MultiChannelImage, side: usize) -> MultiChannelImage {
    for c in 0..image.channels() {
        let ch = image.channel_mut(c);
        if ch.iter().any(|v| !(0.0..=1.0).contains(v)) {
            let (lo, hi) = ch
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            for v in ch.iter_mut() {
                *v = if hi > lo { (*v - lo) / (hi - lo) } else { 0.0 };
            }
        }
    }
    if image.height() != side || image.width() != side {
        image = resize_bilinear(&image, side);
    }
    image
}
