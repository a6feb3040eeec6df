//! `run`: trains every seed of an experiment and writes its artifacts.
//!
//! ```text
//! <out>/datasets/<generator>-<hash>.csv
//! <out>/results/<method>__<task>.csv
//! <out>/manifests/<method>__<task>.json
//! <out>/checkpoints/<method>__<task>__seed<seed>.ckpt
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use uda_core::methods::{train, TrainOutcome};

use crate::config::ExperimentConfig;
use crate::{cache, checkpoint, results};

/// Names the variable that sets the root for relative output directories.
pub const OUT_ENV: &str = "UDA_LAB_OUT";

/// `--out` wins over `run.out`, which falls back to `runs`. A relative result
/// is placed under `$UDA_LAB_OUT` when that is set.
pub fn resolve_out(cli: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    let base = cli
        .map(Path::to_path_buf)
        .or_else(|| cfg.run.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    match std::env::var_os(OUT_ENV) {
        Some(root) if base.is_relative() => PathBuf::from(root).join(base),
        _ => base,
    }
}

#[derive(Debug, Serialize)]
struct RunEntry {
    seed: u64,
    run_index: usize,
    final_accuracy: f64,
    checkpoint: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    method: &'a str,
    task: &'a str,
    config_hash: &'a str,
    config: &'a ExperimentConfig,
    uda_core_version: &'a str,
    uda_lab_version: &'a str,
    results_file: String,
    runs: Vec<RunEntry>,
    wall_time_seconds: f64,
}

#[derive(Debug)]
pub struct RunSummary {
    pub results_file: PathBuf,
    pub manifest_file: PathBuf,
    pub final_accuracies: Vec<(u64, f64)>,
}

/// Trains every seed with up to `parallel` workers and writes all artifacts.
/// Output files do not depend on the worker count.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, parallel: usize) -> Result<RunSummary> {
    let start = Instant::now();
    let pair = cache::load_or_generate(&out.join("datasets"), &cfg.dataset)?;
    let spec = cfg.train_spec();
    let hash = cfg.hash()?;
    let method = cfg.method.name();
    let task = cfg.task();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .context("starting worker pool")?;
    let outcomes: Vec<TrainOutcome> = pool.install(|| {
        cfg.run
            .seeds
            .par_iter()
            .map(|&seed| {
                let mut o = train(&spec, &pair, seed).with_context(|| format!("{method} seed {seed}"))?;
                o.result.config_hash = hash.clone();
                o.result.task = task.to_string();
                Ok(o)
            })
            .collect::<Result<_>>()
    })?;

    for sub in ["results", "manifests", "checkpoints"] {
        std::fs::create_dir_all(out.join(sub)).with_context(|| format!("creating {}", out.join(sub).display()))?;
    }
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for (i, o) in outcomes.iter().enumerate() {
        rows.extend(results::rows_for(&o.result, task, i));
        let ckpt = format!("{method}__{task}__seed{}.ckpt", o.result.seed);
        checkpoint::save(&out.join("checkpoints").join(&ckpt), &o.params)?;
        entries.push(RunEntry {
            seed: o.result.seed,
            run_index: i,
            final_accuracy: o.result.final_accuracy,
            checkpoint: ckpt,
        });
    }
    let results_name = results::file_name(method, task);
    let results_file = out.join("results").join(&results_name);
    results::write(&results_file, &rows)?;

    let final_accuracies = entries.iter().map(|e| (e.seed, e.final_accuracy)).collect();
    let manifest = Manifest {
        method,
        task,
        config_hash: &hash,
        config: cfg,
        uda_core_version: uda_core::VERSION,
        uda_lab_version: env!("CARGO_PKG_VERSION"),
        results_file: results_name,
        runs: entries,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    let manifest_file = out.join("manifests").join(format!("{method}__{task}.json"));
    std::fs::write(&manifest_file, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", manifest_file.display()))?;
    Ok(RunSummary {
        results_file,
        manifest_file,
        final_accuracies,
    })
}
