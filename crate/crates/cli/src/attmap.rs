use std::path::PathBuf;

use chada_core::io::pgm::write_pgm;
use chada_core::io::{ingest, read_mcif, Dataset};
use chada_core::model::Backbone;
use clap::Args;
use serde::Serialize;

use crate::config::resolve_manifest;
use crate::error::{CliError, CliResult, Context};
use crate::model::load_encoder;
use crate::output::write_json;
use crate::ModelArgs;

#[derive(Args, Debug)]
pub struct AttmapArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Transformer block, counted from 0.
    #[arg(long)]
    pub layer: usize,
    /// A single MCIF image.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    pub image: Option<PathBuf>,
    /// Dataset to take image `--index` from.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Directory for `head<h>_ch<c>.pgm` and `attention.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct AttentionFile {
    layer: usize,
    heads: usize,
    channels: usize,
    grid_side: usize,
    /// `[head][channel][cell]` weight of the class-token query on each patch.
    cls: Vec<Vec<Vec<f32>>>,
}

pub fn run(a: AttmapArgs) -> CliResult<()> {
    let (enc, _) = load_encoder(&a.model, None)?;
    let Backbone::Chada(chada) = &enc.backbone else {
        return Err(CliError::usage(format!(
            "attention maps need a chada encoder, got {}",
            enc.backbone.arch()
        )));
    };
    let side = enc.config.image_size;
    let image = match (&a.image, &a.data) {
        (Some(p), _) => ingest(read_mcif(p).context(p.display())?, side),
        (None, Some(d)) => {
            let manifest = resolve_manifest(d)?;
            let ds = Dataset::load(&manifest, side).context(manifest.display())?;
            ds.images.get(a.index).cloned().ok_or_else(|| {
                CliError::usage(format!("--index {} out of range for {} images", a.index, ds.len()))
            })?
        }
        (None, None) => unreachable!("clap requires one of --image and --data"),
    };
    let maps = chada
        .attention_maps(&enc.store, &image, a.layer)
        .map_err(|e| CliError::usage(format!("--layer: {e}")))?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let g = maps.grid_side;
    let cls: Vec<Vec<Vec<f32>>> = (0..maps.heads).map(|h| maps.cls_heatmaps(h)).collect();
    for (h, per_channel) in cls.iter().enumerate() {
        for (c, plane) in per_channel.iter().enumerate() {
            let p = a.out.join(format!("head{h}_ch{c}.pgm"));
            write_pgm(&p, plane, g, g).context(p.display())?;
        }
    }
    write_json(
        &a.out.join("attention.json"),
        &AttentionFile {
            layer: a.layer,
            heads: maps.heads,
            channels: maps.n_channels,
            grid_side: g,
            cls,
        },
    )?;
    log::info!("wrote {} heatmaps to {}", maps.heads * maps.n_channels, a.out.display());
    Ok(())
}
