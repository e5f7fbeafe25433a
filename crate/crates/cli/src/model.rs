use chada_core::autodiff::ParamStore;
use chada_core::io::load_checkpoint;
use chada_core::model::{Backbone, EncoderConfig, Pooling};
use chada_core::ssl::{DinoTrainer, TrainerSpec};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, Context};
use crate::ModelArgs;

/// A read-only encoder with the configuration it was built from.
pub struct LoadedEncoder {
    pub backbone: Backbone,
    pub store: ParamStore<f32>,
    pub config: EncoderConfig,
}

/// Loads the teacher encoder of a checkpoint, or initializes one from the
/// run configuration. `pooling` overrides the stored pooling either way.
pub fn load_encoder(args: &ModelArgs, pooling: Option<Pooling>) -> CliResult<(LoadedEncoder, RunConfig)> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(arch) = args.arch {
        cfg.arch = arch;
    }
    if let Some(seed) = args.seed {
        cfg.dino.seed = seed;
    }
    cfg.validate()?;
    let trainer = match &args.checkpoint {
        Some(path) => {
            if args.arch.is_some() {
                return Err(CliError::usage("--arch conflicts with --checkpoint, which fixes the architecture"));
            }
            let mut ckpt = load_checkpoint(path).context(path.display())?;
            if let Some(p) = pooling {
                let mut spec: TrainerSpec = serde_json::from_value(ckpt.config.clone())
                    .map_err(|e| CliError::data(format!("{}: config: {e}", path.display())))?;
                spec.encoder.pooling = p;
                ckpt.config = serde_json::to_value(&spec).expect("spec serializes");
            }
            DinoTrainer::from_checkpoint(&ckpt).context(path.display())?
        }
        None => {
            if let Some(p) = pooling {
                cfg.encoder.pooling = p;
            }
            DinoTrainer::new(cfg.arch, cfg.encoder.clone(), cfg.dino.clone(), 1).context("--config")?
        }
    };
    cfg.arch = trainer.arch();
    cfg.encoder = trainer.spec.encoder.clone();
    let loaded = LoadedEncoder {
        backbone: trainer.backbone().clone(),
        store: trainer.encoder_store(),
        config: trainer.spec.encoder.clone(),
    };
    Ok((loaded, cfg))
}
