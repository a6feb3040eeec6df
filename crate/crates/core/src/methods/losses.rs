//! Loss terms recorded on a tape. Every function takes already-computed
//! logits or features, so the same builders serve training and tests.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{dimension, validation, Result};
use crate::nn::{BoundNetwork, Mode, Network};
use crate::tensor::{softmax_rows, Tape, Tensor, Var};

/// Floor inside `log(1 − p)` for the self-penalisation term.
pub const LOG_FLOOR: f64 = 1e-12;

fn check_weight(field: &'static str, w: f64) -> Result<()> {
    if w >= 0.0 && w.is_finite() {
        Ok(())
    } else {
        Err(validation(field, format!("{w} must be a finite nonnegative weight")))
    }
}

fn check_unit(field: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(validation(field, format!("{v} not in [0, 1]")))
    }
}

/// One-hot domain targets: `n_source` rows of source (0) then `n_target` of target (1).
pub fn domain_targets(n_source: usize, n_target: usize) -> Tensor {
    let labels: Vec<usize> = (0..n_source + n_target).map(|i| usize::from(i >= n_source)).collect();
    Tensor::one_hot(&labels, 2).expect("two domain classes")
}

/// Cross-entropy of the label predictor on a labeled source batch.
pub fn source_only_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (b, k) = tape.value(logits).dims2("source_only_loss")?;
    if b == 0 || labels.is_empty() {
        return Err(validation("batch", "source batch is empty"));
    }
    if labels.len() != b {
        return Err(dimension(
            "source_only_loss",
            format!("{} labels for {b} logit rows", labels.len()),
        ));
    }
    let target = Tensor::one_hot(labels, k)?;
    tape.softmax_cross_entropy(logits, &target)
}

/// Domain classifier `head` behind a reversal layer of strength `lambda`,
/// scored against `target` rows.
pub fn reversed_domain_loss(
    tape: &mut Tape,
    features: Var,
    head: &Network,
    bound: &BoundNetwork,
    lambda: f64,
    mode: Mode,
    target: &Tensor,
) -> Result<Var> {
    let reversed = tape.grad_reverse(features, lambda)?;
    let logits = head.forward(tape, bound, reversed, mode)?;
    tape.softmax_cross_entropy(logits, target)
}

#[derive(Clone, Copy, Debug)]
pub struct DannLosses {
    pub label: Var,
    pub domain: Var,
    pub total: Var,
}

/// `L_y` on the source batch plus `L_d` over both domains, with the features
/// reaching the domain head through `grad_reverse(·, λ)`.
#[allow(clippy::too_many_arguments)]
pub fn dann_loss(
    tape: &mut Tape,
    logits_s: Var,
    labels_s: &[usize],
    features_s: Var,
    features_t: Var,
    head: &Network,
    bound: &BoundNetwork,
    lambda: f64,
    mode: Mode,
) -> Result<DannLosses> {
    check_weight("lambda", lambda)?;
    let label = source_only_loss(tape, logits_s, labels_s)?;
    let (bs, bt) = (tape.value(features_s).rows(), tape.value(features_t).rows());
    if bt == 0 {
        return Err(validation("batch", "target batch is empty"));
    }
    let joined = tape.concat_rows(features_s, features_t)?;
    let domain = reversed_domain_loss(tape, joined, head, bound, lambda, mode, &domain_targets(bs, bt))?;
    let total = tape.add(label, domain)?;
    Ok(DannLosses { label, domain, total })
}

/// Moving-average class centroids in feature space for both domains.
#[derive(Clone, Debug, PartialEq)]
pub struct MstnState {
    /// `[K, F]`
    pub source: Tensor,
    /// `[K, F]`
    pub target: Tensor,
    pub theta: f64,
}

impl MstnState {
    pub fn zeros(classes: usize, features: usize, theta: f64) -> Result<Self> {
        check_unit("ema_theta", theta)?;
        Ok(Self {
            source: Tensor::zeros(&[classes, features]),
            target: Tensor::zeros(&[classes, features]),
            theta,
        })
    }

    pub fn classes(&self) -> usize {
        self.source.rows()
    }
}

/// `(mix, weights)` with `new = mix + weights · F`: present classes become
/// `θ·prev + (1−θ)·mean`, absent classes keep `prev`.
fn centroid_mixing(prev: &Tensor, labels: &[usize], theta: f64) -> Result<(Tensor, Tensor)> {
    let (k, _) = prev.dims2("centroids")?;
    let b = labels.len();
    let mut counts = vec![0usize; k];
    for &y in labels {
        if y >= k {
            return Err(validation("labels", format!("label {y} not below K = {k}")));
        }
        counts[y] += 1;
    }
    let mut weights = vec![0.0; k * b];
    for (i, &y) in labels.iter().enumerate() {
        weights[y * b + i] = (1.0 - theta) / counts[y] as f64;
    }
    let mut mix = prev.clone();
    for (c, row) in mix.data_mut().chunks_exact_mut(prev.cols()).enumerate() {
        if counts[c] > 0 {
            row.iter_mut().for_each(|v| *v *= theta);
        }
    }
    Ok((mix, Tensor::matrix(k, b, weights)?))
}

fn centroid_var(tape: &mut Tape, prev: &Tensor, features: Var, labels: &[usize], theta: f64) -> Result<Var> {
    let (b, f) = tape.value(features).dims2("centroids")?;
    if b != labels.len() || f != prev.cols() {
        return Err(dimension(
            "centroids",
            format!("{b}×{f} features, {} labels, centroids {:?}", labels.len(), prev.shape()),
        ));
    }
    let (mix, weights) = centroid_mixing(prev, labels, theta)?;
    let mix = tape.constant(mix);
    let weights = tape.constant(weights);
    let moved = tape.matmul(weights, features)?;
    tape.add(mix, moved)
}

/// Plain-value centroid update; target rows use `pseudo_t`.
pub fn mstn_centroid_update(
    prev: &MstnState,
    features_s: &Tensor,
    labels_s: &[usize],
    features_t: &Tensor,
    pseudo_t: &[usize],
) -> Result<MstnState> {
    let mut tape = Tape::new();
    let fs = tape.constant(features_s.clone());
    let ft = tape.constant(features_t.clone());
    let cs = centroid_var(&mut tape, &prev.source, fs, labels_s, prev.theta)?;
    let ct = centroid_var(&mut tape, &prev.target, ft, pseudo_t, prev.theta)?;
    Ok(MstnState {
        source: tape.value(cs).clone(),
        target: tape.value(ct).clone(),
        theta: prev.theta,
    })
}

/// `Σ_k ‖C_S^k − C_T^k‖²`.
pub fn mstn_semantic_loss(state: &MstnState) -> f64 {
    state
        .source
        .data()
        .iter()
        .zip(state.target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

#[derive(Clone, Copy, Debug)]
pub struct MstnTerms {
    pub classification: Var,
    pub domain: Var,
    pub semantic: Var,
    /// Updated centroids, `[K, F]`, still attached to the features.
    pub centroids_source: Var,
    pub centroids_target: Var,
}

/// Records `L_C`, the adversarial `L_DC` (reversal coefficient 1) and the
/// semantic term on freshly updated centroids.
#[allow(clippy::too_many_arguments)]
pub fn mstn_terms(
    tape: &mut Tape,
    state: &MstnState,
    logits_s: Var,
    labels_s: &[usize],
    features_s: Var,
    features_t: Var,
    pseudo_t: &[usize],
    head: &Network,
    bound: &BoundNetwork,
    mode: Mode,
) -> Result<MstnTerms> {
    let dann = dann_loss(tape, logits_s, labels_s, features_s, features_t, head, bound, 1.0, mode)?;
    let cs = centroid_var(tape, &state.source, features_s, labels_s, state.theta)?;
    let ct = centroid_var(tape, &state.target, features_t, pseudo_t, state.theta)?;
    let diff = tape.sub(cs, ct)?;
    let sq = tape.mul(diff, diff)?;
    let semantic = tape.sum(sq)?;
    Ok(MstnTerms {
        classification: dann.label,
        domain: dann.domain,
        semantic,
        centroids_source: cs,
        centroids_target: ct,
    })
}

/// Adds `w · term` to `acc`, skipping the term entirely when `w = 0`.
fn add_weighted(tape: &mut Tape, acc: Var, term: Var, w: f64) -> Result<Var> {
    if w == 0.0 {
        return Ok(acc);
    }
    let scaled = if w == 1.0 { term } else { tape.scale(term, w)? };
    tape.add(acc, scaled)
}

/// `L_C + λ·L_DC + γ·L_SM`. Zero weights drop their terms, so `λ = γ = 0`
/// returns `L_C` itself.
pub fn mstn_total(tape: &mut Tape, terms: &MstnTerms, lambda: f64, gamma: f64) -> Result<Var> {
    check_weight("lambda", lambda)?;
    check_weight("gamma", gamma)?;
    let acc = add_weighted(tape, terms.classification, terms.domain, lambda)?;
    add_weighted(tape, acc, terms.semantic, gamma)
}

/// Inputs and soft labels of a fixed-ratio mixup batch.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedBatch {
    pub inputs: Tensor,
    pub targets: Tensor,
    pub ratio: f64,
}

/// `x̃ = λ·x_s + (1−λ)·x_t`, `ỹ = λ·y_s + (1−λ)·ŷ_t`.
pub fn fixbi_mix(
    x_s: &Tensor,
    labels_s: &[usize],
    x_t: &Tensor,
    pseudo_t: &[usize],
    classes: usize,
    ratio: f64,
) -> Result<MixedBatch> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(validation("ratio", format!("mix ratio {ratio} not in (0, 1)")));
    }
    if x_s.shape() != x_t.shape() || labels_s.len() != pseudo_t.len() || labels_s.len() != x_s.rows() {
        return Err(validation(
            "batch",
            format!(
                "mixup needs equal batches: source {:?} with {} labels, target {:?} with {} pseudo-labels",
                x_s.shape(),
                labels_s.len(),
                x_t.shape(),
                pseudo_t.len()
            ),
        ));
    }
    let inputs = Tensor::new(
        x_s.shape().to_vec(),
        x_s.data()
            .iter()
            .zip(x_t.data())
            .map(|(a, b)| ratio * a + (1.0 - ratio) * b)
            .collect(),
    )?;
    let ys = Tensor::one_hot(labels_s, classes)?;
    let yt = Tensor::one_hot(pseudo_t, classes)?;
    let targets = Tensor::new(
        ys.shape().to_vec(),
        ys.data()
            .iter()
            .zip(yt.data())
            .map(|(a, b)| ratio * a + (1.0 - ratio) * b)
            .collect(),
    )?;
    Ok(MixedBatch { inputs, targets, ratio })
}

/// Mean soft cross-entropy of `logits` (predictions on `x̃`) against `ỹ`.
pub fn fixbi_fm_loss(tape: &mut Tape, logits: Var, mixed: &MixedBatch) -> Result<Var> {
    tape.softmax_cross_entropy(logits, &mixed.targets)
}

fn row_mean_of_masked(tape: &mut Tape, per_row: Var, mask: Vec<f64>) -> Result<Var> {
    let b = mask.len();
    let mask = tape.constant(Tensor::vector(mask));
    let kept = tape.mul(per_row, mask)?;
    let s = tape.sum(kept)?;
    tape.scale(s, 1.0 / b as f64)
}

/// `(1/B) Σ 1(max p > τ) · CE(q, argmax p)` with teacher probabilities `p`
/// treated as constants and `student_logits` producing `q`.
pub fn bidirectional_loss(tape: &mut Tape, teacher_probs: &Tensor, student_logits: Var, tau: f64) -> Result<Var> {
    check_unit("tau", tau)?;
    let (b, k) = tape.value(student_logits).dims2("bidirectional_loss")?;
    if teacher_probs.shape() != [b, k] {
        return Err(dimension(
            "bidirectional_loss",
            format!("teacher {:?} vs student [{b}, {k}]", teacher_probs.shape()),
        ));
    }
    let pseudo = teacher_probs.argmax_rows();
    let mask: Vec<f64> = teacher_probs.max_rows().iter().map(|&m| f64::from(u8::from(m > tau))).collect();
    let onehot = tape.constant(Tensor::one_hot(&pseudo, k)?);
    let logp = tape.log_softmax(student_logits)?;
    let picked = tape.mul(logp, onehot)?;
    let nll = tape.sum_rows(picked)?;
    let nll = tape.neg(nll)?;
    row_mean_of_masked(tape, nll, mask)
}

/// `(1/B) Σ 1(max p < τ) · (−log(1 − p_top1))` on the network's own predictions.
pub fn self_penalization_loss(tape: &mut Tape, logits: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(validation("tau", format!("{tau} not in (0, 1]")));
    }
    let (b, k) = tape.value(logits).dims2("self_penalization_loss")?;
    let probs = tape.softmax(logits)?;
    let p = tape.value(probs).clone();
    let top = p.argmax_rows();
    let mask: Vec<f64> = p.max_rows().iter().map(|&m| f64::from(u8::from(m < tau))).collect();
    let onehot = tape.constant(Tensor::one_hot(&top, k)?);
    let picked = tape.mul(probs, onehot)?;
    let p_top = tape.sum_rows(picked)?;
    let ones = tape.constant(Tensor::full(&[b], 1.0));
    let rest = tape.sub(ones, p_top)?;
    let rest = tape.clamp_min(rest, LOG_FLOOR)?;
    let log_rest = tape.log(rest)?;
    let penalty = tape.neg(log_rest)?;
    row_mean_of_masked(tape, penalty, mask)
}

/// `(1/B) Σ ‖softmax(a) − softmax(b)‖²`.
pub fn consistency_loss(tape: &mut Tape, logits_a: Var, logits_b: Var) -> Result<Var> {
    let (b, _) = tape.value(logits_a).dims2("consistency_loss")?;
    let pa = tape.softmax(logits_a)?;
    let pb = tape.softmax(logits_b)?;
    let d = tape.sub(pa, pb)?;
    let sq = tape.mul(d, d)?;
    let s = tape.sum(sq)?;
    tape.scale(s, 1.0 / b as f64)
}

pub const TAU_MIN: f64 = 0.5;
pub const TAU_MAX: f64 = 0.99;

/// Mean top-1 confidence clamped to `[0.5, 0.99]`.
pub fn update_threshold(confidences: &[f64]) -> Result<f64> {
    if confidences.is_empty() {
        return Err(validation("confidences", "need at least one confidence"));
    }
    let mean = confidences.iter().sum::<f64>() / confidences.len() as f64;
    if !mean.is_finite() {
        return Err(validation("confidences", "non-finite confidence"));
    }
    Ok(mean.clamp(TAU_MIN, TAU_MAX))
}

/// Top-1 softmax probability of every row.
pub fn top1_confidences(logits: &Tensor) -> Vec<f64> {
    softmax_rows(logits).max_rows()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainVariant {
    /// One domain head sees the mixed images with soft domain labels `(α, 1−α)`.
    MixedClassifier,
    /// The domain head sees the unmixed source and target batches.
    SeparateClassifier,
}

/// Inputs to the domain term of the combined method.
pub enum DomainBatch {
    Mixed { features: Var, alpha: f64 },
    Separate { features_s: Var, features_t: Var },
}

pub fn dannfixbi_domain_loss(
    tape: &mut Tape,
    batch: DomainBatch,
    head: &Network,
    bound: &BoundNetwork,
    lambda: f64,
    mode: Mode,
) -> Result<Var> {
    check_weight("lambda_grl", lambda)?;
    match batch {
        DomainBatch::Mixed { features, alpha } => {
            check_unit("alpha", alpha)?;
            let b = tape.value(features).rows();
            let mut soft = Vec::with_capacity(2 * b);
            for _ in 0..b {
                soft.extend([alpha, 1.0 - alpha]);
            }
            let target = Tensor::matrix(b, 2, soft)?;
            reversed_domain_loss(tape, features, head, bound, lambda, mode, &target)
        }
        DomainBatch::Separate { features_s, features_t } => {
            let (bs, bt) = (tape.value(features_s).rows(), tape.value(features_t).rows());
            let joined = tape.concat_rows(features_s, features_t)?;
            reversed_domain_loss(tape, joined, head, bound, lambda, mode, &domain_targets(bs, bt))
        }
    }
}

/// The four Fixbi terms, each already summed over both peers. The peer
/// terms are `None` while the warm-up gate is closed and are then never built.
#[derive(Clone, Copy, Debug)]
pub struct FixbiTerms {
    pub fm: Var,
    pub sp: Var,
    pub bim: Option<Var>,
    pub cr: Option<Var>,
}

/// Whether the peer terms are active in (1-based) epoch `e`.
pub fn warmup_open(epoch: usize, warmup: usize) -> bool {
    epoch > warmup
}

/// `L_fm + L_sp + 1(e > k)·(L_bim + L_cr)`.
pub fn fixbi_objective(tape: &mut Tape, terms: &FixbiTerms, epoch: usize, warmup: usize) -> Result<Var> {
    let mut acc = tape.add(terms.fm, terms.sp)?;
    if warmup_open(epoch, warmup) {
        let (Some(bim), Some(cr)) = (terms.bim, terms.cr) else {
            return Err(crate::error::Error::State(format!(
                "epoch {epoch} is past the warm-up of {warmup} but peer terms were not built"
            )));
        };
        acc = tape.add(acc, bim)?;
        acc = tape.add(acc, cr)?;
    }
    Ok(acc)
}

/// `β·L_fixbi + γ·L_dom`; a zero `γ` (or no domain term) leaves the pure Fixbi objective.
pub fn dannfixbi_total(
    tape: &mut Tape,
    terms: &FixbiTerms,
    domain: Option<Var>,
    epoch: usize,
    warmup: usize,
    beta: f64,
    gamma: f64,
) -> Result<Var> {
    check_weight("beta", beta)?;
    check_weight("gamma_dom", gamma)?;
    let fixbi = fixbi_objective(tape, terms, epoch, warmup)?;
    let mut total = if beta == 1.0 { fixbi } else { tape.scale(fixbi, beta)? };
    if let Some(d) = domain {
        total = add_weighted(tape, total, d, gamma)?;
    }
    Ok(total)
}
