//! Accuracy, table averages and the one-sided Wilcoxon signed-rank test.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// Largest pair count for which the exact null distribution is enumerated.
pub const EXACT_LIMIT: usize = 20;
/// Fewest nonzero differences the test accepts.
pub const MIN_PAIRS: usize = 5;

/// Percent of positions where `predictions` equals `labels`.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(validation("labels", "cannot score an empty set"));
    }
    if predictions.len() != labels.len() {
        return Err(validation(
            "predictions",
            format!("{} predictions for {} labels", predictions.len(), labels.len()),
        ));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(100.0 * correct as f64 / labels.len() as f64)
}

/// Two-decimal rounding, ties away from zero. The small nudge absorbs binary
/// representation error so that e.g. 74.505 rounds up as printed.
pub fn round2(x: f64) -> f64 {
    let scaled = x * 100.0;
    let nudge = 1e-9 * scaled.abs().max(1.0);
    let r = if scaled >= 0.0 {
        libm::floor(scaled + 0.5 + nudge)
    } else {
        -libm::floor(-scaled + 0.5 + nudge)
    };
    r / 100.0
}

fn mean(values: &[f64], field: &'static str) -> Result<f64> {
    if values.is_empty() {
        return Err(validation(field, "need at least one value"));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(validation(field, format!("{v} is not finite")));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean of per-run accuracies, rounded to two decimals.
pub fn aggregate(rows: &[f64]) -> Result<f64> {
    mean(rows, "rows").map(round2)
}

/// Mean of per-task averages, rounded to two decimals.
pub fn method_mean(task_averages: &[f64]) -> Result<f64> {
    mean(task_averages, "task_averages").map(round2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub method: String,
    pub task: String,
    pub runs: Vec<f64>,
    pub average: f64,
}

impl AccuracyTable {
    pub fn new(method: impl Into<String>, task: impl Into<String>, runs: Vec<f64>) -> Result<Self> {
        let average = aggregate(&runs)?;
        Ok(Self {
            method: method.into(),
            task: task.into(),
            runs,
            average,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// `xs` tends to exceed `ys`.
    Greater,
    /// `xs` tends to fall below `ys`.
    Less,
}

impl Alternative {
    pub fn flip(self) -> Self {
        match self {
            Alternative::Greater => Alternative::Less,
            Alternative::Less => Alternative::Greater,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub n: usize,
    pub t_minus: f64,
    pub t_plus: f64,
    pub z: f64,
    /// One-sided exact tail; present when `n ≤ EXACT_LIMIT`.
    pub p_exact: Option<f64>,
    pub p_approx: f64,
}

/// Average ranks (1-based) of `values`, ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// `P(T ≥ observed)` where `T` sums the ranks that receive a positive sign
/// under independent fair signs. Ranks are multiples of ½, so the count runs
/// over doubled ranks in integers.
fn exact_upper_tail(ranks: &[f64], observed: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| libm::round(2.0 * r) as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let threshold = libm::round(2.0 * observed) as usize;
    let hits: u64 = counts.iter().skip(threshold).sum();
    hits as f64 / libm::ldexp(1.0, ranks.len() as i32)
}

/// One-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped and tied magnitudes share average ranks.
/// `z = (T − n(n+1)/4) / √(n(n+1)(2n+1)/24)` without continuity correction,
/// where `T` is `T⁺` for [`Alternative::Greater`] and `T⁻` for
/// [`Alternative::Less`]; both p values are upper tails of that `T`.
pub fn wilcoxon_signed_rank(xs: &[f64], ys: &[f64], alternative: Alternative) -> Result<WilcoxonResult> {
    if xs.len() != ys.len() {
        return Err(validation(
            "ys",
            format!("paired samples differ in length: {} vs {}", xs.len(), ys.len()),
        ));
    }
    if let Some(v) = xs.iter().chain(ys).find(|v| !v.is_finite()) {
        return Err(validation("xs", format!("{v} is not finite")));
    }
    let diffs: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(Error::Degenerate(String::from("all paired differences are zero")));
    }
    let n = diffs.len();
    if n < MIN_PAIRS {
        return Err(validation(
            "xs",
            format!("{n} nonzero differences; at least {MIN_PAIRS} are needed"),
        ));
    }
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&magnitudes);
    let t_plus: f64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).fold(0.0, |acc, (r, _)| acc + r);
    let t_minus: f64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d < 0.0).fold(0.0, |acc, (r, _)| acc + r);
    let t = match alternative {
        Alternative::Greater => t_plus,
        Alternative::Less => t_minus,
    };
    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let sigma = libm::sqrt(nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0);
    let z = (t - mu) / sigma;
    let p_approx = 0.5 * libm::erfc(z / core::f64::consts::SQRT_2);
    let p_exact = (n <= EXACT_LIMIT).then(|| exact_upper_tail(&ranks, t));
    Ok(WilcoxonResult {
        n,
        t_minus,
        t_plus,
        z,
        p_exact,
        p_approx,
    })
}
