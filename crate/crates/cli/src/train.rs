use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chada_core::io::{load_checkpoint, save_checkpoint, Dataset, Split};
use chada_core::model::Arch;
use chada_core::ssl::{training_units, DinoTrainer, StepLog};
use chada_core::{Error, MultiChannelImage};
use clap::Args;
use serde::Serialize;

use crate::config::{resolve_manifest, RunConfig};
use crate::error::{CliError, CliResult, Context};
use crate::output::write_json;
use crate::parse_arch;

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// chada, onechannel or interchannel.
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<Arch>,
    /// Dataset manifest, a directory holding one, or a name under `$CHADA_DATA_DIR`.
    /// Only the train split is used.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for `checkpoint.json`/`.bin` and `log.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Stop after this many steps; also sets the schedule length.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate (default depends on the architecture).
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint; its configuration is used unchanged.
    #[arg(long, conflicts_with_all = ["arch", "config", "steps", "epochs", "batch_size", "lr", "seed"])]
    pub resume: Option<PathBuf>,
    /// Save a checkpoint every N steps in addition to the final one.
    #[arg(long, default_value_t = 100)]
    pub checkpoint_every: u64,
    /// Progress line on stderr every N steps.
    #[arg(long, default_value_t = 10)]
    pub log_every: u64,
}

#[derive(Serialize)]
struct NanDump<'a> {
    error: String,
    step: u64,
    recent_steps: Vec<StepLog>,
    nonfinite_student_params: Vec<&'a str>,
    checkpoint: String,
}

pub fn run(a: TrainArgs) -> CliResult<()> {
    let manifest = resolve_manifest(&a.data)?;
    let (mut trainer, units) = match &a.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path).context(path.display())?;
            let trainer = DinoTrainer::from_checkpoint(&ckpt).context(path.display())?;
            let units = load_units(&manifest, trainer.arch(), trainer.spec.encoder.image_size)?;
            (trainer, units)
        }
        None => {
            let cfg = fresh_config(&a)?;
            let units = load_units(&manifest, cfg.arch, cfg.encoder.image_size)?;
            let trainer = DinoTrainer::new(cfg.arch, cfg.encoder, cfg.dino, units.len()).context("--config")?;
            (trainer, units)
        }
    };
    fit(&a, &mut trainer, &units, a.resume.is_some())
}

fn fresh_config(a: &TrainArgs) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(arch) = a.arch {
        cfg.arch = arch;
    }
    let d = &mut cfg.dino;
    if a.steps.is_some() {
        d.max_steps = a.steps;
    }
    d.epochs = a.epochs.unwrap_or(d.epochs);
    d.batch_size = a.batch_size.unwrap_or(d.batch_size);
    d.base_lr = a.lr.or(d.base_lr);
    d.seed = a.seed.unwrap_or(d.seed);
    cfg.validate()?;
    Ok(cfg)
}

fn load_units(manifest: &Path, arch: Arch, side: usize) -> CliResult<Vec<MultiChannelImage>> {
    let ds = Dataset::load(manifest, side).context(manifest.display())?;
    training_units(arch, &ds.images_of(Split::Train)).context(manifest.display())
}

fn open_log(path: &Path, append: bool) -> CliResult<BufWriter<File>> {
    let f = OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    Ok(BufWriter::new(f))
}

fn fit(a: &TrainArgs, trainer: &mut DinoTrainer, units: &[MultiChannelImage], resumed: bool) -> CliResult<()> {
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    if a.checkpoint_every == 0 || a.log_every == 0 {
        return Err(CliError::usage("--checkpoint-every and --log-every must be at least 1"));
    }
    let ckpt_path = a.out.join("checkpoint.json");
    let log_path = a.out.join("log.jsonl");
    let mut log = open_log(&log_path, resumed)?;
    let total = trainer.spec.total_steps;
    log::info!(
        "training {} on {} units from step {} to {total}",
        trainer.arch(),
        units.len(),
        trainer.step
    );
    let mut recent: VecDeque<StepLog> = VecDeque::with_capacity(20);
    let result = trainer.fit(units, total, |t, s| {
        let line = serde_json::to_string(&s.log).expect("step log serializes");
        writeln!(log, "{line}").map_err(|e| Error::InvalidArgument(format!("{}: {e}", log_path.display())))?;
        if recent.len() == 20 {
            recent.pop_front();
        }
        recent.push_back(s.log);
        if t.step % a.log_every == 0 || t.step == total {
            log::info!("step {}/{total} loss {:.5} lr {:.2e} grad {:.3}", t.step, s.log.loss, s.log.lr, s.log.grad_norm);
        }
        if t.step % a.checkpoint_every == 0 && t.step < total {
            log.flush().map_err(|e| Error::InvalidArgument(format!("{}: {e}", log_path.display())))?;
            save_checkpoint(&ckpt_path, &t.to_checkpoint()?)?;
        }
        Ok(())
    });
    log.flush().map_err(|e| CliError::io(&log_path, e))?;
    match result {
        Ok(_) => {
            save_checkpoint(&ckpt_path, &trainer.to_checkpoint().context(ckpt_path.display())?)
                .context(ckpt_path.display())?;
            log::info!("wrote {}", ckpt_path.display());
            Ok(())
        }
        Err(e @ Error::NonFinite(_)) => {
            // The failing step is rejected before any update, so the trainer
            // still holds the last finite state.
            let dump_ckpt = a.out.join("nan_dump_checkpoint.json");
            save_checkpoint(&dump_ckpt, &trainer.to_checkpoint().context(dump_ckpt.display())?)
                .context(dump_ckpt.display())?;
            let dump = NanDump {
                error: e.to_string(),
                step: trainer.step,
                recent_steps: recent.into_iter().collect(),
                nonfinite_student_params: trainer
                    .student
                    .entries()
                    .iter()
                    .filter(|p| p.value.data().iter().any(|v| !v.is_finite()))
                    .map(|p| p.name.as_str())
                    .collect(),
                checkpoint: dump_ckpt.display().to_string(),
            };
            let dump_path = a.out.join("nan_dump.json");
            write_json(&dump_path, &dump)?;
            Err(CliError::Numeric(format!("{e}; state dumped to {}", dump_path.display())))
        }
        Err(e) => Err(CliError::from(e)),
    }
}
