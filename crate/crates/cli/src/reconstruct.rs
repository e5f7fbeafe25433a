use std::path::PathBuf;

use chada_core::eval::{
    evaluate_decoder, reconstruction_pairs, train_channel_decoder, DecoderConfig, DecoderTrainConfig, EvalReport,
    MetricKind,
};
use chada_core::io::pgm::write_pgm;
use chada_core::io::{Dataset, Split};
use clap::Args;

use crate::config::resolve_manifest;
use crate::error::{CliError, CliResult, Context};
use crate::model::load_encoder;
use crate::output::write_json;
use crate::ModelArgs;

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// Channel to predict (default: the manifest's `target_channel`).
    #[arg(long)]
    pub target_channel: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Decoder optimization steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Decoder parameter budget.
    #[arg(long)]
    pub decoder_params: Option<usize>,
    /// Directory for `report.json` and prediction PGMs of the first test images.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(a: ReconstructArgs) -> CliResult<()> {
    let (enc, mut cfg) = load_encoder(&a.model, None)?;
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    cfg.decoder_params = a.decoder_params.unwrap_or(cfg.decoder_params);
    cfg.validate()?;
    let train_cfg = DecoderTrainConfig {
        steps: a.steps.unwrap_or(cfg.decoder.steps),
        lr: a.lr.unwrap_or(cfg.decoder.lr),
        ..cfg.decoder.clone()
    };
    let manifest = resolve_manifest(&a.data)?;
    let ds = Dataset::load(&manifest, enc.config.image_size).context(manifest.display())?;
    let target = a
        .target_channel
        .or(ds.target_channel)
        .ok_or_else(|| CliError::usage(format!("--target-channel: {} names no target channel", manifest.display())))?;

    let pairs = |split| {
        reconstruction_pairs(&enc.backbone, &enc.store, &ds.images_of(split), target).context(manifest.display())
    };
    let (xtr, ytr) = pairs(Split::Train)?;
    let (xte, yte) = pairs(Split::Test)?;
    if xtr.is_empty() || xte.is_empty() {
        return Err(CliError::data(format!("{}: needs both train and test images", manifest.display())));
    }
    let side = enc.config.image_size;
    let dcfg = DecoderConfig::with_budget(xtr[0].len(), side, cfg.decoder_params)
        .map_err(|e| CliError::usage(format!("decoder for image size {side}: {e}")))?;
    log::info!("decoder with {} parameters, {} train / {} test images", dcfg.num_params(), xtr.len(), xte.len());

    let mut metrics = [vec![], vec![], vec![]];
    for (k, &seed) in cfg.seeds.iter().enumerate() {
        let tc = DecoderTrainConfig { seed, ..train_cfg.clone() };
        let trained = train_channel_decoder(&xtr, &ytr, &dcfg, &tc).context(format!("decoder seed {seed}"))?;
        let m = evaluate_decoder(&trained, &xte, &yte).context(format!("decoder seed {seed}"))?;
        log::info!("seed {seed}: r2 {:.4} mse {:.5} mae {:.5}", m.r2, m.mse, m.mae);
        metrics[0].push(m.r2);
        metrics[1].push(m.mse);
        metrics[2].push(m.mae);
        if k == 0 {
            std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
            for (i, x) in xte.iter().take(4).enumerate() {
                let pred = trained.decoder.predict(&trained.store, x).context("decoder")?;
                let p = a.out.join(format!("pred_{i:02}.pgm"));
                write_pgm(&p, &pred, side, side).context(p.display())?;
                let t = a.out.join(format!("target_{i:02}.pgm"));
                write_pgm(&t, &yte[i], side, side).context(t.display())?;
            }
        }
    }
    let task = format!("reconstruct ch{target}");
    let [r2, mse, mae] = metrics;
    let reports = vec![
        EvalReport::from_seeds(task.clone(), MetricKind::R2, r2).context("--seeds")?,
        EvalReport::from_seeds(task.clone(), MetricKind::Mse, mse).context("--seeds")?,
        EvalReport::from_seeds(task, MetricKind::Mae, mae).context("--seeds")?,
    ];
    write_json(&a.out.join("report.json"), &reports)
}
