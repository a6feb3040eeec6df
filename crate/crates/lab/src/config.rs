//! Experiment files: one TOML document with `dataset`, `method`, `model`,
//! `optim`, `batch`, `augment` and `run` sections. Unknown keys are rejected
//! and errors carry the dotted path of the offending field.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uda_core::data::{AugmentOp, BatchStrategy, DatasetSpec};
use uda_core::methods::{BatchConfig, MethodConfig, ModelConfig, OptimConfig, TrainSpec};

fn budget() -> usize {
    32
}

/// Batch section. Without an explicit strategy, the Fixbi family uses concat
/// batches and everything else proportional ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<BatchStrategy>,
    #[serde(default = "budget")]
    pub budget: usize,
}

impl Default for BatchBlock {
    fn default() -> Self {
        Self {
            strategy: None,
            budget: budget(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    /// Replaces the method's epoch count when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    pub seeds: Vec<u64>,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Task label in result files. Defaults to the generator name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub method: MethodConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub batch: BatchBlock,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub augment: Vec<AugmentOp>,
    pub run: RunBlock,
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text, overrides).with_context(|| format!("in {}", path.display()))
    }

    /// Parses a document, applies `section.key=value` overrides, then validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| anyhow!("syntax error: {e}"))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner().to_string();
            // The toml error repeats the key path on a trailing line.
            let msg = inner.lines().filter(|l| !l.starts_with("in `")).collect::<Vec<_>>().join(" ");
            anyhow!("{path}: {}", msg.trim())
        })?;
        if let Some(e) = cfg.run.epochs {
            cfg.method.set_epochs(e);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.method.validate().map_err(|e| anyhow!("method: {e}"))?;
        self.optim.scheduler.validate().map_err(|e| anyhow!("optim.scheduler: {e}"))?;
        if self.run.seeds.is_empty() {
            bail!("run.seeds: need at least one seed");
        }
        let mut seen = self.run.seeds.clone();
        seen.sort_unstable();
        if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
            bail!("run.seeds: seed {} listed twice", w[0]);
        }
        if self.batch.budget == 0 {
            bail!("batch.budget: must be positive");
        }
        if let Some(task) = &self.run.task {
            if task.is_empty() || !task.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                bail!("run.task: `{task}` must be nonempty and use only letters, digits, `_` and `-`");
            }
        }
        Ok(())
    }

    pub fn task(&self) -> &str {
        self.run.task.as_deref().unwrap_or(self.dataset.name())
    }

    pub fn train_spec(&self) -> TrainSpec {
        let strategy = self.batch.strategy.unwrap_or(if self.method.is_fixbi_family() {
            BatchStrategy::Concat
        } else {
            BatchStrategy::Proportional
        });
        TrainSpec {
            method: self.method.clone(),
            model: self.model.clone(),
            optim: self.optim.clone(),
            batch: BatchConfig {
                strategy,
                budget: self.batch.budget,
            },
            augment: self.augment.clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing config")
    }

    /// SHA-256 of the canonical TOML form with the output directory removed,
    /// so the same experiment hashes the same wherever it is written.
    pub fn hash(&self) -> Result<String> {
        let mut canon = self.clone();
        canon.run.out = None;
        let digest = Sha256::digest(canon.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{spec}` is not of the form section.key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override `{spec}` has an empty key segment");
    }
    let raw = raw.trim();
    // Anything that is not a TOML value is taken as a bare string.
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut cur = table;
    for (i, p) in parents.iter().enumerate() {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override `{spec}`: `{}` is not a section", path[..=i].join(".")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
