//! Downstream evaluation on frozen embeddings.

pub mod decoder;
pub mod joint;
pub mod knn;
pub mod metrics;
pub mod pca;
pub mod probe;
pub mod split;

use serde::{Deserialize, Serialize};

pub use decoder::{
    evaluate_decoder, reconstruction_pairs, train_channel_decoder, ChannelDecoder, DecoderConfig, DecoderTrainConfig,
    ReconstructionMetrics, TrainedDecoder,
};
pub use joint::{joint_space_analysis, threshold_accuracy, JointAnalysis, JointInput};
pub use knn::{cosine_distance, knn_eval, knn_predict};
pub use metrics::{aggregate_seeds, compute_metrics, MetricKind};
pub use pca::{pca_fit, Pca};
pub use probe::{train_linear_probe, LinearProbe, ProbeConfig};
pub use split::low_data_split;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::image::MultiChannelImage;
use crate::model::Backbone;

/// Embeds every image with a read-only encoder, in input order.
pub fn encode_dataset(backbone: &Backbone, store: &ParamStore<f32>, images: &[MultiChannelImage]) -> Result<Vec<Vec<f64>>> {
    let one = |img: &MultiChannelImage| -> Result<Vec<f64>> {
        Ok(backbone.encode(store, img)?.0.into_iter().map(|v| v as f64).collect())
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        images.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        images.iter().map(one).collect()
    }
}

/// Logistic-regression accuracy using only the raw pixels of one channel.
pub fn single_channel_baseline(
    train: &[MultiChannelImage],
    train_labels: &[usize],
    test: &[MultiChannelImage],
    test_labels: &[usize],
    channel: usize,
    config: &ProbeConfig,
) -> Result<f64> {
    let feats = |imgs: &[MultiChannelImage]| -> Result<Vec<Vec<f64>>> {
        imgs.iter()
            .map(|im| {
                if channel >= im.channels() {
                    return Err(Error::ChannelIndex {
                        index: channel,
                        max: im.channels(),
                    });
                }
                Ok(im.channel(channel).iter().map(|&v| v as f64).collect())
            })
            .collect()
    };
    let probe = train_linear_probe(&feats(train)?, train_labels, config)?;
    probe.accuracy(&feats(test)?, test_labels)
}

/// One task's metric over several seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub metric: MetricKind,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl EvalReport {
    pub fn from_seeds(task: impl Into<String>, metric: MetricKind, per_seed: Vec<f64>) -> Result<Self> {
        let (mean, std) = aggregate_seeds(&per_seed)?;
        Ok(Self {
            task: task.into(),
            metric,
            per_seed,
            mean,
            std,
        })
    }

    /// `mean±std` on the display scale: accuracy and R² as 0-100, errors raw.
    pub fn display(&self) -> String {
        let scale = match self.metric {
            MetricKind::Top1 | MetricKind::R2 => 100.0,
            MetricKind::Mse | MetricKind::Mae => 1.0,
        };
        if scale == 1.0 {
            format!("{:.4}±{:.4}", self.mean, self.std)
        } else {
            format!("{:.2}±{:.2}", self.mean * scale, self.std * scale)
        }
    }
}

/// Fixed-width table sorted by task then metric.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut rows: Vec<&EvalReport> = reports.iter().collect();
    rows.sort_by(|a, b| a.task.cmp(&b.task).then(a.metric.cmp(&b.metric)));
    let width = rows.iter().map(|r| r.task.len()).max().unwrap_or(4).max(4);
    let mut out = format!("{:<width$}  {:<6}  {:>15}  seeds\n", "task", "metric", "value");
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:<6}  {:>15}  {}\n",
            r.task,
            r.metric.to_string(),
            r.display(),
            r.per_seed.len()
        ));
    }
    out
}
