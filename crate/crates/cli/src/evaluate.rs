use std::path::{Path, PathBuf};

use chada_core::eval::{format_table, knn_eval, train_linear_probe, EvalReport, MetricKind};
use chada_core::io::Split;
use clap::Args;

use crate::config::RunConfig;
use crate::embeddings::EmbeddingTable;
use crate::error::{CliError, CliResult, Context};
use crate::output::{write_json, write_text};

#[derive(Args, Debug)]
pub struct ProbeArgs {
    /// Embeddings CSV written by `encode`.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Share of the train split used: 1.0, 0.1 or 0.01 (any value in (0, 1]).
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Comma-separated seeds; each draws its own subset and probe.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Task name in the report (default: the CSV's file stem).
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct KnnArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Report JSON files (single reports or arrays), or directories of them.
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    /// Text table; a `.json` twin with the same rows is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn probe(a: ProbeArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    cfg.probe.fraction = a.fraction.unwrap_or(cfg.probe.fraction);
    cfg.seeds = a.seeds.unwrap_or(cfg.seeds);
    cfg.validate()?;
    let table = EmbeddingTable::read(&a.embeddings)?;
    let (xtr, ytr) = table.classes_of(Split::Train, &a.embeddings)?;
    let (xte, yte) = table.classes_of(Split::Test, &a.embeddings)?;
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let pc = chada_core::eval::ProbeConfig { seed, ..cfg.probe.clone() };
        let probe = train_linear_probe(&xtr, &ytr, &pc).context(format!("probe seed {seed}"))?;
        let acc = probe.accuracy(&xte, &yte).context(a.embeddings.display())?;
        log::info!("seed {seed}: top-1 {:.2}", 100.0 * acc);
        per_seed.push(acc);
    }
    let task = a
        .task
        .unwrap_or_else(|| format!("{} probe@{}", stem(&a.embeddings), cfg.probe.fraction));
    let report = EvalReport::from_seeds(task, MetricKind::Top1, per_seed).context("--seeds")?;
    log::info!("{}: {}", report.task, report.display());
    write_json(&a.out, &report)
}

pub fn knn(a: KnnArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    cfg.knn_k = a.k.unwrap_or(cfg.knn_k);
    cfg.validate()?;
    let table = EmbeddingTable::read(&a.embeddings)?;
    let (xtr, ytr) = table.classes_of(Split::Train, &a.embeddings)?;
    let (xte, yte) = table.classes_of(Split::Test, &a.embeddings)?;
    if cfg.knn_k > xtr.len() {
        return Err(CliError::usage(format!("--k {} exceeds the {} training rows", cfg.knn_k, xtr.len())));
    }
    // k-NN has no randomness, so one value stands for every seed.
    let acc = knn_eval(&xtr, &ytr, &xte, &yte, cfg.knn_k).context(a.embeddings.display())?;
    let task = a.task.unwrap_or_else(|| format!("{} knn@{}", stem(&a.embeddings), cfg.knn_k));
    let report = EvalReport::from_seeds(task, MetricKind::Top1, vec![acc]).context("knn")?;
    log::info!("{}: {}", report.task, report.display());
    write_json(&a.out, &report)
}

fn read_reports(path: &Path, out: &mut Vec<EvalReport>) -> CliResult<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| CliError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        entries.sort();
        for p in entries {
            read_reports(&p, out)?;
        }
        return Ok(());
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::io(path, e))?;
    let parsed = if value.is_array() {
        serde_json::from_value::<Vec<EvalReport>>(value)
    } else {
        serde_json::from_value::<EvalReport>(value).map(|r| vec![r])
    };
    out.extend(parsed.map_err(|e| CliError::data(format!("{}: not a report: {e}", path.display())))?);
    Ok(())
}

pub fn report(a: ReportArgs) -> CliResult<()> {
    let mut reports = Vec::new();
    for p in &a.inputs {
        read_reports(p, &mut reports)?;
    }
    if reports.is_empty() {
        return Err(CliError::data("no reports found in --inputs"));
    }
    reports.sort_by(|x, y| x.task.cmp(&y.task).then(x.metric.cmp(&y.metric)));
    let json = a.out.with_extension("json");
    if json == a.out {
        return Err(CliError::usage("--out must not end in .json; the JSON copy is written next to it"));
    }
    write_text(&a.out, &format_table(&reports))?;
    write_json(&json, &reports)?;
    log::info!("{} reports written to {} and {}", reports.len(), a.out.display(), json.display());
    Ok(())
}
