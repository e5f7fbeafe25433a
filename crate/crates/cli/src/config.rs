use std::path::{Path, PathBuf};

use chada_core::eval::{DecoderTrainConfig, ProbeConfig};
use chada_core::model::{Arch, EncoderConfig};
use chada_core::ssl::DinoConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Contents of a `--config` file. Every section is optional and unknown keys
/// are rejected. Command-line flags override the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub arch: Arch,
    pub encoder: EncoderConfig,
    pub dino: DinoConfig,
    pub probe: ProbeConfig,
    pub decoder: DecoderTrainConfig,
    /// Parameter budget of the reconstruction decoder.
    pub decoder_params: usize,
    /// Seeds for probes, k-NN and decoders; results are reported as mean and
    /// sample std over these.
    pub seeds: Vec<u64>,
    pub knn_k: usize,
    pub pca_components: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Chada,
            encoder: EncoderConfig::default(),
            dino: DinoConfig::default(),
            probe: ProbeConfig::default(),
            decoder: DecoderTrainConfig::default(),
            decoder_params: 5_200_000,
            seeds: vec![0, 1, 2, 3, 4],
            knn_k: 20,
            pca_components: 5,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.encoder
            .validate()
            .map_err(|e| CliError::usage(format!("config encoder: {e}")))?;
        self.dino.validate().map_err(|e| CliError::usage(format!("config dino: {e}")))?;
        if self.seeds.is_empty() {
            return Err(CliError::usage("seeds: need at least one seed"));
        }
        if self.knn_k == 0 {
            return Err(CliError::usage("knn_k must be at least 1"));
        }
        if !(self.probe.fraction > 0.0 && self.probe.fraction <= 1.0) {
            return Err(CliError::usage(format!("fraction {} outside (0, 1]", self.probe.fraction)));
        }
        Ok(())
    }
}

/// `CHADA_DATA_DIR`, or `data` under the working directory.
pub fn data_root() -> PathBuf {
    std::env::var_os("CHADA_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Resolves a dataset argument: a manifest file, a directory holding
/// `manifest.json`, or a name under the data root.
pub fn resolve_manifest(arg: &Path) -> CliResult<PathBuf> {
    let candidates = [arg.to_path_buf(), data_root().join(arg)];
    for c in candidates {
        if c.is_file() {
            return Ok(c);
        }
        if c.join("manifest.json").is_file() {
            return Ok(c.join("manifest.json"));
        }
    }
    Err(CliError::data(format!(
        "{}: no manifest found (also looked under {})",
        arg.display(),
        data_root().display()
    )))
}
