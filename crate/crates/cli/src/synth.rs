use std::path::PathBuf;

use chada_core::io::synth::{generate_synthetic, SyntheticKind};
use clap::Args;

use crate::config::data_root;
use crate::error::{CliError, CliResult, Context};

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// interchannel-xor, intrachannel-shape or reconstruction.
    #[arg(long, value_parser = parse_kind)]
    pub kind: SyntheticKind,
    #[arg(long, default_value_t = 256)]
    pub count: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 32)]
    pub side: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; defaults to `$CHADA_DATA_DIR/<kind>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_kind(s: &str) -> Result<SyntheticKind, String> {
    s.parse().map_err(|e: chada_core::Error| e.to_string())
}

pub fn run(a: SynthArgs) -> CliResult<()> {
    if a.count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    let dir = a.out.unwrap_or_else(|| {
        let name = serde_json::to_value(a.kind).ok().and_then(|v| v.as_str().map(String::from));
        data_root().join(name.unwrap_or_default())
    });
    let ds = generate_synthetic(a.kind, a.count, a.channels, a.side, a.seed)
        .map_err(|e| CliError::usage(format!("--kind/--channels/--side: {e}")))?;
    let manifest = ds.write(&dir).context(dir.display())?;
    log::info!("wrote {} images and {}", ds.len(), manifest.display());
    Ok(())
}
