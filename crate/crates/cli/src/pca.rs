use std::path::PathBuf;

use chada_core::eval::{joint_space_analysis, JointInput};
use clap::Args;
use serde::Serialize;

use crate::config::RunConfig;
use crate::embeddings::EmbeddingTable;
use crate::error::{CliError, CliResult, Context};
use crate::output::{write_json, write_text};

#[derive(Args, Debug)]
pub struct PcaArgs {
    /// Two embeddings CSVs, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub datasets: Vec<PathBuf>,
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Projected rows as CSV; a `.json` summary is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Summary {
    datasets: Vec<String>,
    explained_variance: Vec<f64>,
    explained_variance_ratio: Vec<f64>,
    orthonormality_error: f64,
    pc1_accuracy: f64,
    pc1_threshold: f64,
}

pub fn run(a: PcaArgs) -> CliResult<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let k = a.components.unwrap_or(cfg.pca_components);
    if k == 0 {
        return Err(CliError::usage("--components must be at least 1"));
    }
    if a.datasets.len() != 2 {
        return Err(CliError::usage(format!("--datasets needs exactly two CSVs, got {}", a.datasets.len())));
    }
    let tables = a
        .datasets
        .iter()
        .map(|p| EmbeddingTable::read(p))
        .collect::<CliResult<Vec<_>>>()?;
    let names: Vec<String> = a.datasets.iter().map(|p| p.display().to_string()).collect();
    if names[0] == names[1] {
        return Err(CliError::usage("--datasets: the two datasets must differ"));
    }
    let input = |i: usize| JointInput {
        name: &names[i],
        embeddings: &tables[i].rows,
        labels: &tables[i].labels,
    };
    let joint = joint_space_analysis(input(0), input(1), k).context(format!("--datasets {}", names.join(",")))?;
    let json = a.out.with_extension("json");
    if json == a.out {
        return Err(CliError::usage("--out must not end in .json; the summary is written next to it"));
    }
    write_text(&a.out, &joint.to_csv())?;
    write_json(
        &json,
        &Summary {
            datasets: names,
            explained_variance: joint.pca.explained_variance.clone(),
            explained_variance_ratio: joint.pca.explained_variance_ratio.clone(),
            orthonormality_error: joint.pca.orthonormality_error(),
            pc1_accuracy: joint.pc1_accuracy,
            pc1_threshold: joint.pc1_threshold,
        },
    )?;
    log::info!("PC1 separates the datasets with accuracy {:.3}", joint.pc1_accuracy);
    Ok(())
}
