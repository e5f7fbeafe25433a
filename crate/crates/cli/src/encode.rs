use std::path::PathBuf;

use chada_core::eval::encode_dataset;
use chada_core::io::Dataset;
use chada_core::model::Pooling;
use clap::Args;

use crate::config::resolve_manifest;
use crate::embeddings::EmbeddingTable;
use crate::error::{CliError, CliResult, Context};
use crate::model::load_encoder;
use crate::{parse_pooling, ModelArgs};

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Dataset manifest, a directory holding one, or a name under `$CHADA_DATA_DIR`.
    #[arg(long)]
    pub data: PathBuf,
    /// cls or mean; defaults to the encoder's configured pooling.
    #[arg(long, value_parser = parse_pooling)]
    pub pool: Option<Pooling>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads for embedding extraction (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

pub fn run(a: EncodeArgs) -> CliResult<()> {
    let (enc, _) = load_encoder(&a.model, a.pool)?;
    let manifest = resolve_manifest(&a.data)?;
    let ds = Dataset::load(&manifest, enc.config.image_size).context(manifest.display())?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = a.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::usage(format!("--threads: {e}")))?;
    log::info!("encoding {} images with {}", ds.len(), enc.backbone.arch());
    let rows = pool
        .install(|| encode_dataset(&enc.backbone, &enc.store, &ds.images))
        .context(manifest.display())?;
    let table = EmbeddingTable {
        splits: ds.splits.clone(),
        labels: ds.labels.iter().map(|l| l.value()).collect(),
        rows,
    };
    table.write(&a.out)?;
    log::info!("wrote {} rows of width {} to {}", table.rows.len(), table.width(), a.out.display());
    Ok(())
}
