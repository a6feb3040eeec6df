//! Parameter updates (SGD with momentum / Nesterov / coupled weight decay, Adam)
//! and the two learning-rate schedules.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::nn::ParamSet;
use crate::tensor::Tensor;

/// Per-parameter update rule. State is keyed by parameter name, so the order
/// in which parameters are visited does not matter.
pub trait Optimizer {
    fn update(&mut self, name: &str, param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()>;
}

fn check_grad(name: &str, param: &Tensor, grad: &Tensor) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::State(format!(
            "gradient for {name} has shape {:?}, parameter has {:?}",
            grad.shape(),
            param.shape()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub nesterov: bool,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(validation("lr", format!("{} must be positive", self.lr)));
        }
        if !(self.momentum >= 0.0) {
            return Err(validation("momentum", format!("{} must be nonnegative", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(validation(
                "weight_decay",
                format!("{} must be nonnegative", self.weight_decay),
            ));
        }
        if self.nesterov && self.momentum <= 0.0 {
            return Err(validation("nesterov", "requires momentum > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Sgd {
    cfg: SgdConfig,
    buffers: BTreeMap<String, Tensor>,
}

impl Sgd {
    pub fn new(cfg: SgdConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            buffers: BTreeMap::new(),
        })
    }
}

impl Optimizer for Sgd {
    fn update(&mut self, name: &str, param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
        check_grad(name, param, grad)?;
        let SgdConfig {
            momentum,
            weight_decay,
            nesterov,
            ..
        } = self.cfg;
        let buf = self
            .buffers
            .entry(String::from(name))
            .or_insert_with(|| Tensor::zeros(param.shape()));
        for ((p, &g), b) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(buf.data_mut())
        {
            let g = g + weight_decay * *p;
            *b = momentum * *b + g;
            let step = if nesterov { g + momentum * *b } else { *b };
            *p -= lr * step;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "AdamConfig::default_beta1")]
    pub beta1: f64,
    #[serde(default = "AdamConfig::default_beta2")]
    pub beta2: f64,
    #[serde(default = "AdamConfig::default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl AdamConfig {
    fn default_beta1() -> f64 {
        0.9
    }
    fn default_beta2() -> f64 {
        0.999
    }
    fn default_eps() -> f64 {
        1e-8
    }

    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(validation("lr", format!("{} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(validation("beta", "Adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(validation("eps", "eps must be positive, weight decay nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Tensor,
    v: Tensor,
    t: u32,
}

/// Bias-corrected Adam; the step counter is tracked per parameter.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: BTreeMap::new(),
        })
    }

    pub fn step_count(&self, name: &str) -> u32 {
        self.state.get(name).map_or(0, |s| s.t)
    }
}

impl Optimizer for Adam {
    fn update(&mut self, name: &str, param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
        check_grad(name, param, grad)?;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.cfg;
        let st = self.state.entry(String::from(name)).or_insert_with(|| Moments {
            m: Tensor::zeros(param.shape()),
            v: Tensor::zeros(param.shape()),
            t: 0,
        });
        st.t += 1;
        let bc1 = 1.0 - libm::pow(beta1, st.t as f64);
        let bc2 = 1.0 - libm::pow(beta2, st.t as f64);
        let (m, v) = (st.m.data_mut(), st.v.data_mut());
        for (j, p) in param.data_mut().iter_mut().enumerate() {
            let g = grad.data()[j] + weight_decay * *p;
            m[j] = beta1 * m[j] + (1.0 - beta1) * g;
            v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *p -= lr * m_hat / (libm::sqrt(v_hat) + eps);
        }
        Ok(())
    }
}

fn step_all(opt: &mut dyn Optimizer, params: &mut ParamSet, grads: &ParamSet, lr: f64) -> Result<()> {
    for (name, p) in params.iter_mut() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::State(format!("missing gradient for {name}")))?;
        opt.update(name, p, g, lr)?;
    }
    Ok(())
}

/// One SGD step over a whole parameter set at `cfg.lr`.
pub fn sgd_step(params: &mut ParamSet, grads: &ParamSet, state: &mut Sgd) -> Result<()> {
    let lr = state.cfg.lr;
    step_all(state, params, grads, lr)
}

/// One Adam step over a whole parameter set at the configured rate.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut Adam) -> Result<()> {
    let lr = state.cfg.lr;
    step_all(state, params, grads, lr)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchedulerConfig {
    /// `η₀ / (1 + α·p)^β` with `p` the fraction of completed steps.
    Custom {
        #[serde(default = "default_eta0")]
        eta0: f64,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_beta")]
        beta: f64,
    },
    /// Half-cosine from `eta_max` to `eta_min` over `t_max` epochs
    /// (the run length when `t_max` is absent).
    Cosine {
        eta_max: f64,
        #[serde(default)]
        eta_min: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_max: Option<usize>,
    },
    Constant { lr: f64 },
}

fn default_eta0() -> f64 {
    0.01
}
fn default_alpha() -> f64 {
    10.0
}
fn default_beta() -> f64 {
    0.75
}

impl SchedulerConfig {
    pub fn custom_default() -> Self {
        SchedulerConfig::Custom {
            eta0: default_eta0(),
            alpha: default_alpha(),
            beta: default_beta(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SchedulerConfig::Custom { eta0, alpha, beta } => {
                if !(eta0 > 0.0) || !(alpha >= 0.0) || !(beta >= 0.0) {
                    return Err(validation("scheduler", "custom schedule needs η₀ > 0, α ≥ 0, β ≥ 0"));
                }
            }
            SchedulerConfig::Cosine {
                eta_max,
                eta_min,
                t_max,
            } => {
                if !(eta_max > 0.0) || !(eta_min >= 0.0) || eta_min > eta_max {
                    return Err(validation("scheduler", "cosine schedule needs 0 ≤ η_min ≤ η_max, η_max > 0"));
                }
                if t_max == Some(0) {
                    return Err(validation("scheduler", "t_max must be at least 1"));
                }
            }
            SchedulerConfig::Constant { lr } => {
                if !(lr > 0.0) {
                    return Err(validation("scheduler", "constant learning rate must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Learning rate for a step taken during `epoch` (0-based) at overall
    /// progress `progress ∈ [0,1]`.
    pub fn learning_rate(&self, epoch: usize, total_epochs: usize, progress: f64) -> Result<f64> {
        match *self {
            SchedulerConfig::Custom { .. } => custom_lr(progress, self),
            SchedulerConfig::Cosine { t_max, .. } => {
                let t_max = t_max.unwrap_or(total_epochs).max(1);
                cosine_lr(epoch.min(t_max), t_max, self)
            }
            SchedulerConfig::Constant { lr } => Ok(lr),
        }
    }
}

/// `η_p = η₀ / (1 + α·p)^β`.
pub fn custom_lr(progress: f64, cfg: &SchedulerConfig) -> Result<f64> {
    let SchedulerConfig::Custom { eta0, alpha, beta } = *cfg else {
        return Err(validation("scheduler", "custom_lr needs a custom schedule"));
    };
    if !(0.0..=1.0).contains(&progress) {
        return Err(validation("progress", format!("{progress} not in [0, 1]")));
    }
    Ok(eta0 / libm::pow(1.0 + alpha * progress, beta))
}

/// `η_t = η_min + ½(η_max − η_min)(1 + cos(π·T_cur/T_max))`.
pub fn cosine_lr(t_cur: usize, t_max: usize, cfg: &SchedulerConfig) -> Result<f64> {
    let SchedulerConfig::Cosine { eta_max, eta_min, .. } = *cfg else {
        return Err(validation("scheduler", "cosine_lr needs a cosine schedule"));
    };
    if t_max == 0 {
        return Err(validation("t_max", "must be at least 1"));
    }
    if t_cur > t_max {
        return Err(validation("t_cur", format!("{t_cur} exceeds T_max = {t_max}")));
    }
    let phase = core::f64::consts::PI * t_cur as f64 / t_max as f64;
    Ok(eta_min + 0.5 * (eta_max - eta_min) * (1.0 + libm::cos(phase)))
}
