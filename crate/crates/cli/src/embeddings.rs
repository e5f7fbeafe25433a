use std::path::Path;

use chada_core::io::Split;

use crate::error::{CliError, CliResult};
use crate::output::create_parent;

/// Rows of an embeddings CSV: `index,split,label,e0,e1,...`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub splits: Vec<Split>,
    pub labels: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Test => "test",
    }
}

impl EmbeddingTable {
    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        create_parent(path)?;
        let err = |e: csv::Error| CliError::io(path, e);
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        let mut header = vec!["index".to_string(), "split".into(), "label".into()];
        header.extend((0..self.width()).map(|j| format!("e{j}")));
        w.write_record(&header).map_err(err)?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec = vec![i.to_string(), split_name(self.splits[i]).into(), self.labels[i].to_string()];
            // `{}` on f64 is the shortest string that parses back to the same value.
            rec.extend(row.iter().map(|v| format!("{v}")));
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
        let width = r.headers().map_err(|e| CliError::io(path, e))?.len().saturating_sub(3);
        let mut t = Self {
            splits: Vec::new(),
            labels: Vec::new(),
            rows: Vec::new(),
        };
        for (n, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| CliError::io(path, e))?;
            let bad = |what: &str| CliError::data(format!("{} row {}: {what}", path.display(), n + 1));
            t.splits.push(match &rec[1] {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(bad(&format!("unknown split {other:?}"))),
            });
            t.labels.push(rec[2].parse().map_err(|_| bad("label is not a number"))?);
            let row: Vec<f64> = rec
                .iter()
                .skip(3)
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad("embedding value is not a number"))?;
            if row.len() != width {
                return Err(bad(&format!("{} values, header has {width}", row.len())));
            }
            t.rows.push(row);
        }
        if t.rows.is_empty() {
            return Err(CliError::data(format!("{}: no rows", path.display())));
        }
        Ok(t)
    }

    /// Features and class labels of one split.
    pub fn classes_of(&self, split: Split, path: &Path) -> CliResult<(Vec<Vec<f64>>, Vec<usize>)> {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in (0..self.rows.len()).filter(|&i| self.splits[i] == split) {
            let l = self.labels[i];
            if l < 0.0 || l.fract() != 0.0 {
                return Err(CliError::data(format!(
                    "{} row {}: label {l} is not a class index",
                    path.display(),
                    i + 1
                )));
            }
            x.push(self.rows[i].clone());
            y.push(l as usize);
        }
        if x.is_empty() {
            return Err(CliError::data(format!("{}: no {} rows", path.display(), split_name(split))));
        }
        Ok((x, y))
    }
}
