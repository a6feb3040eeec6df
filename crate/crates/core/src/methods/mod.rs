//! The five training methods and the loop that runs them.

mod losses;
mod train;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{AugmentOp, BatchStrategy};
use crate::error::{validation, Result};
use crate::optim::SchedulerConfig;

pub use losses::*;
pub use train::{build_nets, fixbi_peer_losses, train, FixbiState, Nets, PeerLosses, TrainOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRamp {
    Constant,
    /// `λ · (2 / (1 + exp(−10p)) − 1)` with `p` the run progress.
    SigmoidRamp,
}

impl LambdaRamp {
    pub fn at(self, lambda: f64, progress: f64) -> f64 {
        match self {
            LambdaRamp::Constant => lambda,
            LambdaRamp::SigmoidRamp => lambda * (2.0 / (1.0 + libm::exp(-10.0 * progress)) - 1.0),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn constant_ramp() -> LambdaRamp {
    LambdaRamp::Constant
}
fn ema_theta() -> f64 {
    0.7
}
fn tau0() -> f64 {
    0.95
}
fn fixbi_epochs() -> usize {
    150
}
fn fixbi_warmup() -> usize {
    100
}
fn short_epochs() -> usize {
    60
}
fn sd_fixbi() -> f64 {
    0.7
}
fn td_fixbi() -> f64 {
    0.3
}
fn sd_dannfixbi() -> f64 {
    0.9
}
fn td_dannfixbi() -> f64 {
    0.7
}
fn separate() -> DomainVariant {
    DomainVariant::SeparateClassifier
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodConfig {
    SourceOnly {
        #[serde(default = "short_epochs")]
        epochs: usize,
    },
    Dann {
        #[serde(default = "short_epochs")]
        epochs: usize,
        #[serde(default = "one")]
        lambda_grl: f64,
        #[serde(default = "constant_ramp")]
        lambda_ramp: LambdaRamp,
    },
    Mstn {
        #[serde(default = "short_epochs")]
        epochs: usize,
        #[serde(default = "one")]
        lambda: f64,
        #[serde(default = "one")]
        gamma: f64,
        #[serde(default = "ema_theta")]
        ema_theta: f64,
    },
    Fixbi {
        #[serde(default = "fixbi_epochs")]
        epochs: usize,
        #[serde(default = "sd_fixbi")]
        lambda_sd: f64,
        #[serde(default = "td_fixbi")]
        lambda_td: f64,
        #[serde(default = "tau0")]
        tau0: f64,
        #[serde(default = "fixbi_warmup")]
        warmup: usize,
    },
    DannFixbi {
        #[serde(default = "fixbi_epochs")]
        epochs: usize,
        #[serde(default = "sd_dannfixbi")]
        lambda_sd: f64,
        #[serde(default = "td_dannfixbi")]
        lambda_td: f64,
        #[serde(default = "tau0")]
        tau0: f64,
        #[serde(default = "fixbi_warmup")]
        warmup: usize,
        #[serde(default = "one")]
        beta: f64,
        #[serde(default = "one")]
        gamma_dom: f64,
        #[serde(default = "one")]
        lambda_grl: f64,
        #[serde(default = "separate")]
        variant: DomainVariant,
    },
}

impl MethodConfig {
    pub fn name(&self) -> &'static str {
        match self {
            MethodConfig::SourceOnly { .. } => "source_only",
            MethodConfig::Dann { .. } => "dann",
            MethodConfig::Mstn { .. } => "mstn",
            MethodConfig::Fixbi { .. } => "fixbi",
            MethodConfig::DannFixbi { .. } => "dann_fixbi",
        }
    }

    pub fn epochs(&self) -> usize {
        match *self {
            MethodConfig::SourceOnly { epochs }
            | MethodConfig::Dann { epochs, .. }
            | MethodConfig::Mstn { epochs, .. }
            | MethodConfig::Fixbi { epochs, .. }
            | MethodConfig::DannFixbi { epochs, .. } => epochs,
        }
    }

    pub fn set_epochs(&mut self, value: usize) {
        match self {
            MethodConfig::SourceOnly { epochs }
            | MethodConfig::Dann { epochs, .. }
            | MethodConfig::Mstn { epochs, .. }
            | MethodConfig::Fixbi { epochs, .. }
            | MethodConfig::DannFixbi { epochs, .. } => *epochs = value,
        }
    }

    /// Whether the method trains a domain classifier.
    pub fn has_domain_head(&self) -> bool {
        !matches!(self, MethodConfig::SourceOnly { .. } | MethodConfig::Fixbi { .. })
    }

    pub fn is_fixbi_family(&self) -> bool {
        matches!(self, MethodConfig::Fixbi { .. } | MethodConfig::DannFixbi { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let weight = |field: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(validation(field, format!("{v} must be a finite nonnegative weight")))
            }
        };
        let ratio = |field: &'static str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(validation(field, format!("{v} not in (0, 1)")))
            }
        };
        let unit = |field: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(validation(field, format!("{v} not in [0, 1]")))
            }
        };
        match *self {
            MethodConfig::SourceOnly { .. } => {}
            MethodConfig::Dann { lambda_grl, .. } => weight("lambda_grl", lambda_grl)?,
            MethodConfig::Mstn {
                lambda,
                gamma,
                ema_theta,
                ..
            } => {
                weight("lambda", lambda)?;
                weight("gamma", gamma)?;
                unit("ema_theta", ema_theta)?;
            }
            MethodConfig::Fixbi {
                lambda_sd,
                lambda_td,
                tau0,
                ..
            } => {
                ratio("lambda_sd", lambda_sd)?;
                ratio("lambda_td", lambda_td)?;
                unit("tau0", tau0)?;
                if (lambda_sd + lambda_td - 1.0).abs() > 1e-12 {
                    return Err(validation(
                        "lambda_td",
                        format!("Fixbi needs lambda_sd + lambda_td = 1, got {}", lambda_sd + lambda_td),
                    ));
                }
            }
            MethodConfig::DannFixbi {
                lambda_sd,
                lambda_td,
                tau0,
                beta,
                gamma_dom,
                lambda_grl,
                ..
            } => {
                ratio("lambda_sd", lambda_sd)?;
                ratio("lambda_td", lambda_td)?;
                unit("tau0", tau0)?;
                weight("beta", beta)?;
                weight("gamma_dom", gamma_dom)?;
                weight("lambda_grl", lambda_grl)?;
            }
        }
        Ok(())
    }
}

fn feature_dims() -> Vec<usize> {
    vec![16, 16]
}
fn sixteen() -> usize {
    16
}
fn half() -> f64 {
    0.5
}

/// Layer widths of the three networks. The input width comes from the data
/// and the output width of the label predictor from the class count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden widths of the feature extractor; the last one is the feature size.
    #[serde(default = "feature_dims")]
    pub feature_dims: Vec<usize>,
    #[serde(default)]
    pub feature_dropout: f64,
    #[serde(default = "sixteen")]
    pub label_hidden: usize,
    #[serde(default = "sixteen")]
    pub domain_hidden: usize,
    #[serde(default = "half")]
    pub domain_dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dims: feature_dims(),
            feature_dropout: 0.0,
            label_hidden: 16,
            domain_hidden: 16,
            domain_dropout: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

fn sgd() -> OptimizerKind {
    OptimizerKind::Sgd
}
fn momentum() -> f64 {
    0.9
}
fn weight_decay() -> f64 {
    5e-4
}
fn cosine() -> SchedulerConfig {
    SchedulerConfig::Cosine {
        eta_max: 0.01,
        eta_min: 0.0,
        t_max: None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    #[serde(default = "sgd")]
    pub optimizer: OptimizerKind,
    /// SGD only.
    #[serde(default = "momentum")]
    pub momentum: f64,
    #[serde(default = "weight_decay")]
    pub weight_decay: f64,
    /// SGD only.
    #[serde(default)]
    pub nesterov: bool,
    #[serde(default = "cosine")]
    pub scheduler: SchedulerConfig,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            optimizer: sgd(),
            momentum: momentum(),
            weight_decay: weight_decay(),
            nesterov: false,
            scheduler: cosine(),
        }
    }
}

fn proportional() -> BatchStrategy {
    BatchStrategy::Proportional
}
fn budget() -> usize {
    32
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    #[serde(default = "proportional")]
    pub strategy: BatchStrategy,
    /// Total per step for proportional plans, per domain for concat plans.
    #[serde(default = "budget")]
    pub budget: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            strategy: proportional(),
            budget: budget(),
        }
    }
}

/// Everything `train` needs besides the data and the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub method: MethodConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub batch: BatchConfig,
    /// Applied to raster inputs only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub augment: Vec<AugmentOp>,
}

impl TrainSpec {
    pub fn new(method: MethodConfig) -> Self {
        Self {
            method,
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            batch: BatchConfig::default(),
            augment: Vec::new(),
        }
    }
}

/// Accuracy trajectory of one run. Index 0 holds the accuracy before any
/// update; index `e` the accuracy after epoch `e`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: String,
    pub task: String,
    pub seed: u64,
    pub target_accuracy: Vec<f64>,
    pub source_accuracy: Vec<f64>,
    pub final_accuracy: f64,
    pub config_hash: String,
}
