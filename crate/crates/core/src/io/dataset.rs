use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mcif::{read_mcif, write_mcif};
use crate::error::{Error, Result};
use crate::image::MultiChannelImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
    Reconstruction,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(usize),
    Value(f64),
}

impl Label {
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(c),
            Label::Value(_) => None,
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Label::Class(c) => c as f64,
            Label::Value(v) => v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestItem {
    /// Relative to the manifest's directory unless absolute.
    pub path: String,
    pub label: Label,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_channel: Option<usize>,
    pub items: Vec<ManifestItem>,
}

impl DatasetManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        m.validate().map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.task == TaskKind::Classification {
            if let Some(item) = self.items.iter().find(|i| i.label.class().is_none()) {
                return Err(Error::invalid(format!(
                    "{}: classification labels must be non-negative integers",
                    item.path
                )));
            }
        }
        if self.task == TaskKind::Reconstruction && self.target_channel.is_none() {
            return Err(Error::invalid("reconstruction manifest needs target_channel"));
        }
        Ok(())
    }
}

/// Images held in memory with their labels and splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: TaskKind,
    pub target_channel: Option<usize>,
    pub images: Vec<MultiChannelImage>,
    pub labels: Vec<Label>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn images_of(&self, split: Split) -> Vec<MultiChannelImage> {
        self.indices(split).into_iter().map(|i| self.images[i].clone()).collect()
    }

    pub fn class_labels(&self, split: Option<Split>) -> Result<Vec<usize>> {
        (0..self.len())
            .filter(|&i| split.is_none_or(|s| self.splits[i] == s))
            .map(|i| {
                self.labels[i]
                    .class()
                    .ok_or_else(|| Error::invalid(format!("item {i} has a non-integer label")))
            })
            .collect()
    }

    /// Writes one MCIF per image plus `manifest.json`; returns the manifest path.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut items = Vec::with_capacity(self.len());
        for (i, img) in self.images.iter().enumerate() {
            let name = format!("img_{i:05}.mcif");
            write_mcif(dir.join(&name), img)?;
            items.push(ManifestItem {
                path: name,
                label: self.labels[i],
                split: self.splits[i],
            });
        }
        let manifest = DatasetManifest {
            task: self.task,
            target_channel: self.target_channel,
            items,
        };
        let path = dir.join("manifest.json");
        manifest.write(&path)?;
        Ok(path)
    }

    /// Loads every image of a manifest and ingests it to `side`.
    pub fn load(manifest_path: impl AsRef<Path>, side: usize) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = DatasetManifest::read(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut images = Vec::with_capacity(manifest.items.len());
        for item in &manifest.items {
            let p = base.join(&item.path);
            if !p.exists() {
                return Err(Error::io(
                    &p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "listed in manifest but missing"),
                ));
            }
            images.push(super::ingest(read_mcif(&p)?, side));
        }
        if let Some(t) = manifest.target_channel {
            if let Some((i, img)) = images.iter().enumerate().find(|(_, img)| img.channels() <= t) {
                return Err(Error::invalid(format!(
                    "{}: target channel {t} missing ({} channels)",
                    manifest.items[i].path,
                    img.channels()
                )));
            }
        }
        Ok(Self {
            task: manifest.task,
            target_channel: manifest.target_channel,
            labels: manifest.items.iter().map(|i| i.label).collect(),
            splits: manifest.items.iter().map(|i| i.split).collect(),
            images,
        })
    }
}
