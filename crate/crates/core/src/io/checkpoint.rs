//! Checkpoints: a JSON manifest next to a raw little-endian f32 blob.
//!
//! `model.json` names `model.bin`; entries are stored in insertion order and
//! their byte offsets tile the blob exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("parameter {0} is missing from the checkpoint")]
    MissingEntry(String),
    #[error("parameter {name}: expected shape {expected:?}, checkpoint has {found:?}")]
    EntryMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint has unexpected parameter {0}")]
    UnexpectedEntry(String),
    #[error("blob holds {found} bytes but the manifest describes {expected}")]
    BlobSize { expected: usize, found: usize },
    #[error("entry {0} does not start where the previous one ended")]
    BadOffset(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: u64,
    /// Number of draws already consumed, in whatever unit the owner uses.
    pub counter: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub decay: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub blob: String,
    pub step: u64,
    pub rng: RngState,
    pub config: serde_json::Value,
    pub entries: Vec<EntryMeta>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub rng: RngState,
    pub step: u64,
    pub params: ParamStore<f32>,
}

pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let blob = blob_path(path);
    let mut bytes = Vec::with_capacity(4 * ckpt.params.num_scalars());
    let mut entries = Vec::with_capacity(ckpt.params.len());
    for e in ckpt.params.entries() {
        entries.push(EntryMeta {
            name: e.name.clone(),
            shape: e.value.shape().to_vec(),
            offset: bytes.len(),
            decay: e.decay,
        });
        for v in e.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        blob: blob.file_name().unwrap().to_string_lossy().into_owned(),
        step: ckpt.step,
        rng: ckpt.rng,
        config: ckpt.config.clone(),
        entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    std::fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    // Check the version before the strict schema so old files get a clear error.
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let version = raw.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    let manifest: Manifest = serde_json::from_value(raw).map_err(|e| Error::json(path, e))?;
    let blob = path.with_file_name(&manifest.blob);
    let bytes = std::fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    let expected: usize = manifest.entries.iter().map(|e| 4 * e.shape.iter().product::<usize>()).sum();
    if expected != bytes.len() {
        return Err(CheckpointError::BlobSize {
            expected,
            found: bytes.len(),
        }
        .into());
    }
    let mut params = ParamStore::new();
    let mut cursor = 0;
    for e in &manifest.entries {
        if e.offset != cursor {
            return Err(CheckpointError::BadOffset(e.name.clone()).into());
        }
        let n: usize = e.shape.iter().product();
        let data = bytes[cursor..cursor + 4 * n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        cursor += 4 * n;
        if params.id(&e.name).is_some() {
            return Err(Error::invalid(format!("duplicate checkpoint entry {}", e.name)));
        }
        params.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?, e.decay);
    }
    Ok(Checkpoint {
        config: manifest.config,
        rng: manifest.rng,
        step: manifest.step,
        params,
    })
}

/// Entries whose name starts with `prefix.`, with the prefix removed.
pub fn extract_prefixed(store: &ParamStore<f32>, prefix: &str) -> ParamStore<f32> {
    let lead = format!("{prefix}.");
    let mut out = ParamStore::new();
    for e in store.entries() {
        if let Some(rest) = e.name.strip_prefix(&lead) {
            out.insert(rest, (*e.value).clone(), e.decay);
        }
    }
    out
}

/// Appends every entry of `part` to `into` under `prefix.`.
pub fn insert_prefixed(into: &mut ParamStore<f32>, prefix: &str, part: &ParamStore<f32>) {
    for e in part.entries() {
        into.insert(format!("{prefix}.{}", e.name), (*e.value).clone(), e.decay);
    }
}
