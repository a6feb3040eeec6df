//! Dense networks for the three-part adaptation architecture: a feature
//! extractor, a label predictor and a domain classifier.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dimension, validation, Result};
use crate::optim::Optimizer;
use crate::tensor::{GradMap, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    FeatureExtractor,
    LabelPredictor,
    DomainClassifier,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout masks are drawn from a generator seeded with `seed`.
    Train { seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    role: Role,
    layers: Vec<DenseLayer>,
    /// One rate per gap between consecutive layers.
    dropout: Vec<f64>,
}

/// Tape handles of a network's parameters, `(weight, bias)` per layer.
#[derive(Clone, Debug)]
pub struct BoundNetwork {
    vars: Vec<(Var, Var)>,
}

impl BoundNetwork {
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.vars.iter().flat_map(|&(w, b)| [w, b])
    }
}

/// He-initialized network with zero biases.
///
/// Every layer but the last uses a relu; the feature extractor also ends in
/// one so that features are nonnegative activations. `dropout` applies to
/// every gap between layers.
pub fn init_network(role: Role, dims: &[usize], dropout: f64, seed: u64) -> Result<Network> {
    if dims.len() < 2 {
        return Err(validation("dims", format!("need at least 2 sizes, got {}", dims.len())));
    }
    if dims.contains(&0) {
        return Err(validation("dims", "layer sizes must be positive"));
    }
    if !(0.0..1.0).contains(&dropout) {
        return Err(validation("dropout", format!("{dropout} not in [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_layers = dims.len() - 1;
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = libm::sqrt(2.0 / fan_in as f64);
            let data = (0..fan_in * fan_out)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    std * z
                })
                .collect();
            let last = i + 1 == n_layers;
            let activation = if !last || role == Role::FeatureExtractor {
                Activation::Relu
            } else {
                Activation::None
            };
            DenseLayer {
                weight: Tensor::matrix(fan_out, fan_in, data).expect("shape"),
                bias: Tensor::zeros(&[fan_out]),
                activation,
            }
        })
        .collect();
    Ok(Network {
        role,
        layers,
        dropout: alloc::vec![dropout; n_layers - 1],
    })
}

impl Network {
    /// Assembles a network from explicit layers, checking that dimensions chain.
    pub fn from_layers(role: Role, layers: Vec<DenseLayer>, dropout: Vec<f64>) -> Result<Network> {
        if layers.is_empty() {
            return Err(validation("layers", "network needs at least one layer"));
        }
        if dropout.len() + 1 != layers.len() {
            return Err(validation(
                "dropout",
                format!("{} rates for {} gaps", dropout.len(), layers.len() - 1),
            ));
        }
        if let Some(bad) = dropout.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(validation("dropout", format!("{bad} not in [0, 1)")));
        }
        for (i, layer) in layers.iter().enumerate() {
            let (out, inp) = layer.weight.dims2("dense layer")?;
            if layer.bias.shape() != [out] {
                return Err(dimension(
                    "dense layer",
                    format!("layer {i}: bias {:?} for weight [{out},{inp}]", layer.bias.shape()),
                ));
            }
            if i > 0 && layers[i - 1].out_features() != inp {
                return Err(dimension(
                    "dense layer",
                    format!("layer {i} expects {inp} inputs, previous layer gives {}", layers[i - 1].out_features()),
                ));
            }
        }
        Ok(Network {
            role,
            layers,
            dropout,
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn dropout(&self) -> &[f64] {
        &self.dropout
    }

    pub fn in_features(&self) -> usize {
        self.layers[0].in_features()
    }

    pub fn out_features(&self) -> usize {
        self.layers[self.layers.len() - 1].out_features()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.numel() + l.bias.numel())
            .sum()
    }

    /// Registers the parameters on `tape` as differentiable leaves.
    pub fn bind(&self, tape: &mut Tape) -> BoundNetwork {
        BoundNetwork {
            vars: self
                .layers
                .iter()
                .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
                .collect(),
        }
    }

    /// Records the forward pass of `x[B,in]` on `tape`.
    pub fn forward(&self, tape: &mut Tape, bound: &BoundNetwork, x: Var, mode: Mode) -> Result<Var> {
        let (batch, width) = tape.value(x).dims2("forward")?;
        if width != self.in_features() {
            return Err(dimension(
                "forward",
                format!("input has {width} columns, network expects {}", self.in_features()),
            ));
        }
        let mut rng = match mode {
            Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Mode::Eval => None,
        };
        let mut h = x;
        for (i, (layer, &(w, b))) in self.layers.iter().zip(&bound.vars).enumerate() {
            h = tape.matmul_nt(h, w)?;
            h = tape.add_row(h, b)?;
            if layer.activation == Activation::Relu {
                h = tape.relu(h)?;
            }
            let rate = self.dropout.get(i).copied().unwrap_or(0.0);
            if let Some(rng) = rng.as_mut().filter(|_| rate > 0.0) {
                let keep = 1.0 - rate;
                let n = batch * layer.out_features();
                let data = (0..n)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                let mask = tape.constant(Tensor::matrix(batch, layer.out_features(), data)?);
                h = tape.mul(h, mask)?;
            }
        }
        Ok(h)
    }

    /// Eval-mode output without gradient tracking.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = BoundNetwork {
            vars: self
                .layers
                .iter()
                .map(|l| (tape.constant(l.weight.clone()), tape.constant(l.bias.clone())))
                .collect(),
        };
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &bound, xv, Mode::Eval)?;
        Ok(tape.value(out).clone())
    }

    fn param_name(prefix: &str, layer: usize, kind: &str) -> String {
        if prefix.is_empty() {
            format!("{layer}.{kind}")
        } else {
            format!("{prefix}.{layer}.{kind}")
        }
    }

    /// Applies one optimizer update to every parameter from the gradients of a backward pass.
    pub fn apply_gradients(
        &mut self,
        prefix: &str,
        bound: &BoundNetwork,
        grads: &GradMap,
        optimizer: &mut dyn Optimizer,
        lr: f64,
    ) -> Result<()> {
        for (i, (layer, &(w, b))) in self.layers.iter_mut().zip(&bound.vars).enumerate() {
            for (kind, param, var) in [("weight", &mut layer.weight, w), ("bias", &mut layer.bias, b)] {
                let name = Self::param_name(prefix, i, kind);
                // Parameters the loss never reached get a zero gradient.
                let zero;
                let grad = match grads.get(var) {
                    Some(g) => g,
                    None => {
                        zero = Tensor::zeros(param.shape());
                        &zero
                    }
                };
                optimizer.update(&name, param, grad, lr)?;
            }
        }
        Ok(())
    }

    /// Copies the parameters into `set` under `prefix`.
    pub fn export_params(&self, prefix: &str, set: &mut ParamSet) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            set.insert(Self::param_name(prefix, i, "weight"), layer.weight.clone())?;
            set.insert(Self::param_name(prefix, i, "bias"), layer.bias.clone())?;
        }
        Ok(())
    }

    /// Overwrites the parameters from `set`; shapes must match exactly.
    pub fn import_params(&mut self, prefix: &str, set: &ParamSet) -> Result<()> {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (kind, param) in [("weight", &mut layer.weight), ("bias", &mut layer.bias)] {
                let name = Self::param_name(prefix, i, kind);
                let value = set
                    .get(&name)
                    .ok_or_else(|| validation("params", format!("missing {name}")))?;
                if value.shape() != param.shape() {
                    return Err(dimension(
                        "import_params",
                        format!("{name}: {:?} vs {:?}", value.shape(), param.shape()),
                    ));
                }
                *param = value.clone();
            }
        }
        Ok(())
    }
}

/// Named parameter tensors with unique names in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(validation("params", format!("duplicate parameter name {name}")));
        }
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
