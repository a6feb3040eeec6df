use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use super::losses::*;
use super::{MethodConfig, ModelConfig, OptimConfig, OptimizerKind, RunResult, TrainSpec};
use crate::data::{
    augment_with_rng, eval_pipeline, output_dims, plan_batches, AugmentOp, BatchStrategy, DomainPair, ImageDims,
    Raster,
};
use crate::error::{validation, Error, Result};
use crate::nn::{init_network, BoundNetwork, Mode, Network, ParamSet, Role};
use crate::optim::{Adam, AdamConfig, Optimizer, Sgd, SgdConfig};
use crate::rng::{derive_seed, stream};
use crate::tensor::{softmax_rows, Tape, Tensor, Var};

const STREAM_SOURCE_ORDER: u64 = 20;
const STREAM_TARGET_ORDER: u64 = 21;
const STREAM_DROPOUT: u64 = 30;
const STREAM_AUGMENT_SOURCE: u64 = 40;
const STREAM_AUGMENT_TARGET: u64 = 41;

/// Feature extractor, label predictor and (optionally) domain classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Nets {
    pub features: Network,
    pub label: Network,
    pub domain: Option<Network>,
}

/// Builds the three networks with init streams `10·net_id + {1, 2, 3}`.
pub fn build_nets(
    model: &ModelConfig,
    in_features: usize,
    classes: usize,
    with_domain: bool,
    seed: u64,
    net_id: u64,
) -> Result<Nets> {
    if model.feature_dims.is_empty() {
        return Err(validation("feature_dims", "need at least one feature layer"));
    }
    let mut fdims = vec![in_features];
    fdims.extend(&model.feature_dims);
    let width = *fdims.last().expect("nonempty");
    let base = 10 * net_id;
    let features = init_network(Role::FeatureExtractor, &fdims, model.feature_dropout, derive_seed(seed, base + 1))?;
    let label = init_network(
        Role::LabelPredictor,
        &[width, model.label_hidden, classes],
        0.0,
        derive_seed(seed, base + 2),
    )?;
    let domain = if with_domain {
        Some(init_network(
            Role::DomainClassifier,
            &[width, model.domain_hidden, model.domain_hidden, 2],
            model.domain_dropout,
            derive_seed(seed, base + 3),
        )?)
    } else {
        None
    };
    Ok(Nets { features, label, domain })
}

impl Nets {
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.label.predict(&self.features.predict(x)?)
    }

    pub fn export(&self, prefix: &str, set: &mut ParamSet) -> Result<()> {
        self.features.export_params(&join(prefix, "features"), set)?;
        self.label.export_params(&join(prefix, "label"), set)?;
        if let Some(d) = &self.domain {
            d.export_params(&join(prefix, "domain"), set)?;
        }
        Ok(())
    }

    pub fn import(&mut self, prefix: &str, set: &ParamSet) -> Result<()> {
        self.features.import_params(&join(prefix, "features"), set)?;
        self.label.import_params(&join(prefix, "label"), set)?;
        if let Some(d) = &mut self.domain {
            d.import_params(&join(prefix, "domain"), set)?;
        }
        Ok(())
    }

    fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            features: self.features.bind(tape),
            label: self.label.bind(tape),
            domain: self.domain.as_ref().map(|d| d.bind(tape)),
        }
    }

    fn step(&mut self, prefix: &str, bound: &Bound, grads: &crate::tensor::GradMap, opt: &mut dyn Optimizer, lr: f64) -> Result<()> {
        self.features
            .apply_gradients(&join(prefix, "features"), &bound.features, grads, opt, lr)?;
        self.label.apply_gradients(&join(prefix, "label"), &bound.label, grads, opt, lr)?;
        if let (Some(d), Some(b)) = (&mut self.domain, &bound.domain) {
            d.apply_gradients(&join(prefix, "domain"), b, grads, opt, lr)?;
        }
        Ok(())
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

struct Bound {
    features: BoundNetwork,
    label: BoundNetwork,
    domain: Option<BoundNetwork>,
}

/// The two Fixbi peers and their adaptive thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct FixbiState {
    /// Source-dominant network.
    pub sd: Nets,
    /// Target-dominant network.
    pub td: Nets,
    pub lambda_sd: f64,
    pub lambda_td: f64,
    pub tau_sd: f64,
    pub tau_td: f64,
    pub warmup: usize,
    /// Completed epochs.
    pub epoch: usize,
}

impl FixbiState {
    /// Mean-top-1 update from each peer's confidences on the target set.
    pub fn update_thresholds(&mut self, conf_sd: &[f64], conf_td: &[f64]) -> Result<()> {
        self.tau_sd = update_threshold(conf_sd)?;
        self.tau_td = update_threshold(conf_td)?;
        Ok(())
    }

    /// Averaged softmax of the two peers.
    pub fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        let a = softmax_rows(&self.sd.logits(x)?);
        let b = softmax_rows(&self.td.logits(x)?);
        let data = a.data().iter().zip(b.data()).map(|(p, q)| 0.5 * (p + q)).collect();
        Tensor::new(a.shape().to_vec(), data)
    }
}

/// Per-peer loss values on one batch, evaluated without dropout.
#[derive(Clone, Debug, PartialEq)]
pub struct PeerLosses {
    pub fm: [f64; 2],
    pub sp: [f64; 2],
    pub bim: [f64; 2],
    pub cr: f64,
}

struct PeerVars {
    fm: [Var; 2],
    sp: [Var; 2],
    bim: Option<[Var; 2]>,
    cr: Option<Var>,
    domain: Option<[Var; 2]>,
}

struct FixbiBatch<'a> {
    xs: &'a Tensor,
    ys: &'a [usize],
    xt: &'a Tensor,
    classes: usize,
}

struct DomainSetup {
    variant: DomainVariant,
    lambda_grl: f64,
}

/// Records the Fixbi terms of both peers. `peer_terms` builds the
/// bidirectional and consistency terms; otherwise they are skipped entirely.
#[allow(clippy::too_many_arguments)]
fn record_fixbi(
    tape: &mut Tape,
    state: &FixbiState,
    bounds: [&Bound; 2],
    batch: &FixbiBatch<'_>,
    peer_terms: bool,
    domain: Option<&DomainSetup>,
    modes: &mut dyn FnMut() -> Mode,
) -> Result<PeerVars> {
    let peers = [&state.sd, &state.td];
    let ratios = [state.lambda_sd, state.lambda_td];
    let taus = [state.tau_sd, state.tau_td];
    let teacher: Vec<Tensor> = peers
        .iter()
        .map(|n| n.logits(batch.xt).map(|l| softmax_rows(&l)))
        .collect::<Result<_>>()?;
    let xt = tape.constant(batch.xt.clone());
    let mut fm = Vec::with_capacity(2);
    let mut sp = Vec::with_capacity(2);
    let mut bim = Vec::with_capacity(2);
    let mut dom = Vec::with_capacity(2);
    for i in 0..2 {
        let (net, bound) = (peers[i], bounds[i]);
        let pseudo = teacher[i].argmax_rows();
        let mixed = fixbi_mix(batch.xs, batch.ys, batch.xt, &pseudo, batch.classes, ratios[i])?;
        let xm = tape.constant(mixed.inputs.clone());
        let fmix = net.features.forward(tape, &bound.features, xm, modes())?;
        let lmix = net.label.forward(tape, &bound.label, fmix, modes())?;
        fm.push(fixbi_fm_loss(tape, lmix, &mixed)?);

        let ft = net.features.forward(tape, &bound.features, xt, modes())?;
        let lt = net.label.forward(tape, &bound.label, ft, modes())?;
        sp.push(self_penalization_loss(tape, lt, taus[i])?);
        if peer_terms {
            bim.push(bidirectional_loss(tape, &teacher[1 - i], lt, taus[1 - i])?);
        }
        if let Some(setup) = domain {
            let (head, hb) = match (&net.domain, &bound.domain) {
                (Some(h), Some(b)) => (h, b),
                _ => return Err(Error::State(String::from("combined method needs domain heads"))),
            };
            let db = match setup.variant {
                DomainVariant::MixedClassifier => DomainBatch::Mixed {
                    features: fmix,
                    alpha: ratios[i],
                },
                DomainVariant::SeparateClassifier => {
                    let xs = tape.constant(batch.xs.clone());
                    let fs = net.features.forward(tape, &bound.features, xs, modes())?;
                    DomainBatch::Separate {
                        features_s: fs,
                        features_t: ft,
                    }
                }
            };
            let m = modes();
            dom.push(dannfixbi_domain_loss(tape, db, head, hb, setup.lambda_grl, m)?);
        }
    }
    let cr = if peer_terms {
        // Consistency on the midpoint mixture.
        let mid = 0.5 * (state.lambda_sd + state.lambda_td);
        let pseudo = teacher[0].argmax_rows();
        let mixed = fixbi_mix(batch.xs, batch.ys, batch.xt, &pseudo, batch.classes, mid)?;
        let xm = tape.constant(mixed.inputs);
        let mut outs = Vec::with_capacity(2);
        for i in 0..2 {
            let f = peers[i].features.forward(tape, &bounds[i].features, xm, modes())?;
            outs.push(peers[i].label.forward(tape, &bounds[i].label, f, modes())?);
        }
        Some(consistency_loss(tape, outs[0], outs[1])?)
    } else {
        None
    };
    Ok(PeerVars {
        fm: [fm[0], fm[1]],
        sp: [sp[0], sp[1]],
        bim: peer_terms.then(|| [bim[0], bim[1]]),
        cr,
        domain: domain.map(|_| [dom[0], dom[1]]),
    })
}

/// All Fixbi loss values for both peers on one batch, without dropout.
pub fn fixbi_peer_losses(state: &FixbiState, xs: &Tensor, ys: &[usize], xt: &Tensor, classes: usize) -> Result<PeerLosses> {
    let mut tape = Tape::new();
    let bounds = [state.sd.bind(&mut tape), state.td.bind(&mut tape)];
    let batch = FixbiBatch { xs, ys, xt, classes };
    let v = record_fixbi(&mut tape, state, [&bounds[0], &bounds[1]], &batch, true, None, &mut || Mode::Eval)?;
    let val = |x: Var| tape.value(x).data()[0];
    let bim = v.bim.expect("built");
    Ok(PeerLosses {
        fm: [val(v.fm[0]), val(v.fm[1])],
        sp: [val(v.sp[0]), val(v.sp[1])],
        bim: [val(bim[0]), val(bim[1])],
        cr: val(v.cr.expect("built")),
    })
}

enum Model {
    Single { nets: Nets, mstn: Option<MstnState> },
    Pair(FixbiState),
}

impl Model {
    fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(match self {
            Model::Single { nets, .. } => nets.logits(x)?.argmax_rows(),
            Model::Pair(state) => state.probabilities(x)?.argmax_rows(),
        })
    }
}

fn build_optimizer(cfg: &OptimConfig, lr: f64) -> Result<Box<dyn Optimizer>> {
    Ok(match cfg.optimizer {
        OptimizerKind::Sgd => Box::new(Sgd::new(SgdConfig {
            lr,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            nesterov: cfg.nesterov,
        })?),
        OptimizerKind::Adam => Box::new(Adam::new(AdamConfig {
            weight_decay: cfg.weight_decay,
            ..AdamConfig::with_lr(lr)
        })?),
    })
}

fn augment_rows(x: &Tensor, dims: ImageDims, ops: &[AugmentOp], out: ImageDims, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let mut data = Vec::with_capacity(x.rows() * out.len());
    for i in 0..x.rows() {
        let img = Raster::new(dims, x.row(i).to_vec())?;
        data.extend(augment_with_rng(&img, ops, rng)?.pixels);
    }
    Tensor::matrix(x.rows(), out.len(), data)
}

fn ensure_finite(method: &'static str, term: &'static str, tape: &Tape, v: Var) -> Result<()> {
    if tape.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { method, term })
    }
}

/// Output of [`train`]: the trajectory and the final parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub result: RunResult,
    pub params: ParamSet,
}

struct Augmenter {
    dims: ImageDims,
    out: ImageDims,
    ops: Vec<AugmentOp>,
    rng_s: ChaCha8Rng,
    rng_t: ChaCha8Rng,
}

/// Runs one seeded training run: per step batch → losses → backward →
/// optimizer update, with target accuracy recorded after every epoch.
pub fn train(spec: &TrainSpec, pair: &DomainPair, seed: u64) -> Result<TrainOutcome> {
    let method = &spec.method;
    method.validate()?;
    spec.optim.scheduler.validate()?;
    let name = method.name();
    let source = pair.source();
    let target = pair.target();
    let classes = pair.classes();
    let epochs = method.epochs();

    if method.is_fixbi_family() && spec.batch.strategy != BatchStrategy::Concat {
        return Err(validation(
            "batch.strategy",
            format!("{name} mixes source and target samples and needs the concat strategy"),
        ));
    }
    let plan = plan_batches(spec.batch.strategy, source.len(), target.len(), spec.batch.budget)?;

    let mut augmenter = None;
    let (eval_s, eval_t, in_features) = if spec.augment.is_empty() {
        (source.inputs().clone(), target.inputs().clone(), source.features())
    } else {
        let dims = source
            .image()
            .ok_or_else(|| validation("augment", "augmentation needs raster inputs"))?;
        let out = output_dims(&spec.augment, dims)?;
        let eval_ops = eval_pipeline(&spec.augment);
        if output_dims(&eval_ops, dims)? != out {
            return Err(validation("augment", "training and evaluation pipelines disagree on output size"));
        }
        let mut unused = stream(seed, 0);
        let es = augment_rows(source.inputs(), dims, &eval_ops, out, &mut unused)?;
        let et = augment_rows(target.inputs(), dims, &eval_ops, out, &mut unused)?;
        augmenter = Some(Augmenter {
            dims,
            out,
            ops: spec.augment.clone(),
            rng_s: stream(seed, STREAM_AUGMENT_SOURCE),
            rng_t: stream(seed, STREAM_AUGMENT_TARGET),
        });
        (es, et, out.len())
    };

    let mut model = match *method {
        MethodConfig::Fixbi {
            lambda_sd,
            lambda_td,
            tau0,
            warmup,
            ..
        }
        | MethodConfig::DannFixbi {
            lambda_sd,
            lambda_td,
            tau0,
            warmup,
            ..
        } => {
            let dom = method.has_domain_head();
            Model::Pair(FixbiState {
                sd: build_nets(&spec.model, in_features, classes, dom, seed, 0)?,
                td: build_nets(&spec.model, in_features, classes, dom, seed, 1)?,
                lambda_sd,
                lambda_td,
                tau_sd: tau0,
                tau_td: tau0,
                warmup,
                epoch: 0,
            })
        }
        MethodConfig::Mstn { ema_theta, .. } => {
            let width = *spec.model.feature_dims.last().unwrap_or(&0);
            Model::Single {
                nets: build_nets(&spec.model, in_features, classes, true, seed, 0)?,
                mstn: Some(MstnState::zeros(classes, width, ema_theta)?),
            }
        }
        _ => Model::Single {
            nets: build_nets(&spec.model, in_features, classes, method.has_domain_head(), seed, 0)?,
            mstn: None,
        },
    };

    let truth = pair.ground_truth();
    let score = |model: &Model| -> Result<(f64, f64)> {
        let t = truth.accuracy(&model.predict(&eval_t)?)?;
        let s = crate::eval::accuracy(&model.predict(&eval_s)?, source.labels())?;
        Ok((t, s))
    };
    let (t0, s0) = score(&model)?;
    let mut target_acc = vec![t0];
    let mut source_acc = vec![s0];

    let initial_lr = spec.optim.scheduler.learning_rate(0, epochs, 0.0)?;
    let mut opt = build_optimizer(&spec.optim, initial_lr)?;
    let mut order_s = stream(seed, STREAM_SOURCE_ORDER);
    let mut order_t = stream(seed, STREAM_TARGET_ORDER);
    let dropout_root = derive_seed(seed, STREAM_DROPOUT);
    let total_steps = (epochs * plan.steps_per_epoch).max(1);
    let mut step = 0usize;

    for epoch in 1..=epochs {
        let batches = plan.epoch(source.len(), target.len(), &mut order_s, &mut order_t);
        for b in &batches {
            let progress = step as f64 / total_steps as f64;
            let lr = spec.optim.scheduler.learning_rate(epoch - 1, epochs, progress)?;
            let mut xs = source.inputs().select_rows(&b.source);
            let ys: Vec<usize> = b.source.iter().map(|&i| source.labels()[i]).collect();
            let mut xt = target.inputs().select_rows(&b.target);
            if let Some(a) = augmenter.as_mut() {
                xs = augment_rows(&xs, a.dims, &a.ops, a.out, &mut a.rng_s)?;
                xt = augment_rows(&xt, a.dims, &a.ops, a.out, &mut a.rng_t)?;
            }
            let step_seed = derive_seed(dropout_root, step as u64);
            let mut call = 0u64;
            let mut modes = || {
                call += 1;
                Mode::Train {
                    seed: derive_seed(step_seed, call),
                }
            };

            let mut tape = Tape::new();
            match &mut model {
                Model::Single { nets, mstn } => {
                    let bound = nets.bind(&mut tape);
                    let xsv = tape.constant(xs);
                    let fs = nets.features.forward(&mut tape, &bound.features, xsv, modes())?;
                    let ls = nets.label.forward(&mut tape, &bound.label, fs, modes())?;
                    let mut centroids = None;
                    let total = match *method {
                        MethodConfig::SourceOnly { .. } => {
                            let l = source_only_loss(&mut tape, ls, &ys)?;
                            ensure_finite(name, "classification", &tape, l)?;
                            l
                        }
                        MethodConfig::Dann {
                            lambda_grl,
                            lambda_ramp,
                            ..
                        } => {
                            let xtv = tape.constant(xt);
                            let ft = nets.features.forward(&mut tape, &bound.features, xtv, modes())?;
                            let head = nets.domain.as_ref().expect("dann has a domain head");
                            let hb = bound.domain.as_ref().expect("bound");
                            let lambda = lambda_ramp.at(lambda_grl, progress);
                            let m = modes();
                            let l = dann_loss(&mut tape, ls, &ys, fs, ft, head, hb, lambda, m)?;
                            ensure_finite(name, "label", &tape, l.label)?;
                            ensure_finite(name, "domain", &tape, l.domain)?;
                            l.total
                        }
                        MethodConfig::Mstn { lambda, gamma, .. } => {
                            let state = mstn.as_ref().expect("mstn state");
                            let xtv = tape.constant(xt);
                            let ft = nets.features.forward(&mut tape, &bound.features, xtv, modes())?;
                            let lt = nets.label.forward(&mut tape, &bound.label, ft, modes())?;
                            let pseudo = tape.value(lt).argmax_rows();
                            let head = nets.domain.as_ref().expect("mstn has a domain head");
                            let hb = bound.domain.as_ref().expect("bound");
                            let m = modes();
                            let terms = mstn_terms(&mut tape, state, ls, &ys, fs, ft, &pseudo, head, hb, m)?;
                            ensure_finite(name, "classification", &tape, terms.classification)?;
                            ensure_finite(name, "domain", &tape, terms.domain)?;
                            ensure_finite(name, "semantic", &tape, terms.semantic)?;
                            centroids = Some((terms.centroids_source, terms.centroids_target));
                            mstn_total(&mut tape, &terms, lambda, gamma)?
                        }
                        _ => unreachable!("single-network methods only"),
                    };
                    let grads = tape.backward(total)?;
                    nets.step("", &bound, &grads, opt.as_mut(), lr)?;
                    if let (Some(state), Some((cs, ct))) = (mstn.as_mut(), centroids) {
                        state.source = tape.value(cs).clone();
                        state.target = tape.value(ct).clone();
                    }
                }
                Model::Pair(state) => {
                    let (beta, gamma, domain) = match *method {
                        MethodConfig::DannFixbi {
                            beta,
                            gamma_dom,
                            lambda_grl,
                            variant,
                            ..
                        } => (beta, gamma_dom, Some(DomainSetup { variant, lambda_grl })),
                        _ => (1.0, 0.0, None),
                    };
                    let bounds = [state.sd.bind(&mut tape), state.td.bind(&mut tape)];
                    let gate = warmup_open(epoch, state.warmup);
                    let batch = FixbiBatch {
                        xs: &xs,
                        ys: &ys,
                        xt: &xt,
                        classes,
                    };
                    let v = record_fixbi(&mut tape, state, [&bounds[0], &bounds[1]], &batch, gate, domain.as_ref(), &mut modes)?;
                    let sum2 = |tape: &mut Tape, pair: [Var; 2], term: &'static str| -> Result<Var> {
                        ensure_finite(name, term, tape, pair[0])?;
                        ensure_finite(name, term, tape, pair[1])?;
                        tape.add(pair[0], pair[1])
                    };
                    let fm = sum2(&mut tape, v.fm, "fm")?;
                    let sp = sum2(&mut tape, v.sp, "sp")?;
                    let bim = v.bim.map(|b| sum2(&mut tape, b, "bim")).transpose()?;
                    if let Some(cr) = v.cr {
                        ensure_finite(name, "cr", &tape, cr)?;
                    }
                    let dom = v.domain.map(|d| sum2(&mut tape, d, "domain")).transpose()?;
                    let terms = FixbiTerms { fm, sp, bim, cr: v.cr };
                    let total = dannfixbi_total(&mut tape, &terms, dom, epoch, state.warmup, beta, gamma)?;
                    let grads = tape.backward(total)?;
                    state.sd.step("sd", &bounds[0], &grads, opt.as_mut(), lr)?;
                    state.td.step("td", &bounds[1], &grads, opt.as_mut(), lr)?;
                }
            }
            step += 1;
        }
        if let Model::Pair(state) = &mut model {
            let conf_sd = top1_confidences(&state.sd.logits(&eval_t)?);
            let conf_td = top1_confidences(&state.td.logits(&eval_t)?);
            state.update_thresholds(&conf_sd, &conf_td)?;
            state.epoch = epoch;
        }
        let (t, s) = score(&model)?;
        target_acc.push(t);
        source_acc.push(s);
    }

    let mut params = ParamSet::new();
    match &model {
        Model::Single { nets, .. } => nets.export("", &mut params)?,
        Model::Pair(state) => {
            state.sd.export("sd", &mut params)?;
            state.td.export("td", &mut params)?;
        }
    }
    let final_accuracy = *target_acc.last().expect("initial accuracy recorded");
    Ok(TrainOutcome {
        result: RunResult {
            method: String::from(name),
            task: String::from(pair.descriptor().name()),
            seed,
            target_accuracy: target_acc,
            source_accuracy: source_acc,
            final_accuracy,
            config_hash: String::new(),
        },
        params,
    })
}
