//! Per-epoch accuracy rows: `method,task,seed,run_index,epoch,split,accuracy`.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use uda_core::methods::RunResult;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub task: String,
    pub seed: u64,
    pub run_index: usize,
    pub epoch: usize,
    pub split: Split,
    pub accuracy: f64,
}

/// Rows of one run, epoch-major with the source split first.
pub fn rows_for(run: &RunResult, task: &str, run_index: usize) -> Vec<ResultRow> {
    let mut rows = Vec::with_capacity(2 * run.target_accuracy.len());
    for (epoch, (&t, &s)) in run.target_accuracy.iter().zip(&run.source_accuracy).enumerate() {
        for (split, accuracy) in [(Split::Source, s), (Split::Target, t)] {
            rows.push(ResultRow {
                method: run.method.clone(),
                task: task.to_string(),
                seed: run.seed,
                run_index,
                epoch,
                split,
                accuracy,
            });
        }
    }
    rows
}

pub fn file_name(method: &str, task: &str) -> String {
    format!("{method}__{task}.csv")
}

/// Writes `rows` sorted by `(run_index, epoch, split)`, replacing any file at `path`.
pub fn write(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.run_index, r.epoch, r.split));
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in sorted {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn check(row: &ResultRow) -> Result<()> {
    ensure!(
        (0.0..=100.0).contains(&row.accuracy),
        "accuracy {} outside [0, 100]",
        row.accuracy
    );
    ensure!(!row.method.is_empty() && !row.task.is_empty(), "empty method or task");
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let expected = ["method", "task", "seed", "run_index", "epoch", "split", "accuracy"];
    let headers = r.headers()?.clone();
    if headers.iter().ne(expected) {
        bail!("{}: header {:?} is not {:?}", path.display(), headers, expected);
    }
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        let row: ResultRow = rec.with_context(|| format!("{} row {}", path.display(), i + 1))?;
        check(&row).with_context(|| format!("{} row {}", path.display(), i + 1))?;
        rows.push(row);
    }
    Ok(rows)
}

/// The `results` subdirectory when present, else `dir` itself.
pub fn results_dir(dir: &Path) -> PathBuf {
    let sub = dir.join("results");
    if sub.is_dir() {
        sub
    } else {
        dir.to_path_buf()
    }
}

/// Every `*.csv` under the results directory, in file-name order.
pub fn read_all(dir: &Path) -> Result<Vec<ResultRow>> {
    let dir = results_dir(dir);
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let mut rows = Vec::new();
    for f in files {
        rows.extend(read(&f)?);
    }
    Ok(rows)
}
