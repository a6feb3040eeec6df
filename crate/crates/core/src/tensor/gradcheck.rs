//! Finite-difference verification of the backward rules on random small networks.
//!
//! Each trial builds a feature layer, a label head and a domain head behind a
//! gradient-reversal node. The loss is split into a label part and a domain
//! part; central differences of the two parts are combined the way the
//! reversal layer should combine them (`∂label - λ·∂domain` upstream of the
//! reversal, plain sums elsewhere) and compared with one backward pass.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Step used for the central differences.
pub const FD_STEP: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-6;
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub trials: usize,
    pub parameters_checked: usize,
    pub max_parameters_per_trial: usize,
    pub max_relative_error: f64,
    pub worst_trial: usize,
}

struct Trial {
    input: Tensor,
    label_target: Tensor,
    domain_target: Tensor,
    lambda: f64,
    /// w1, b1, w2, b2, w3, b3
    params: Vec<Tensor>,
}

struct Losses {
    label: f64,
    domain: f64,
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

fn random_distribution_rows(rng: &mut ChaCha8Rng, rows: usize, k: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * k);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|v| v / s));
    }
    Tensor::matrix(rows, k, data).expect("shape")
}

impl Trial {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        loop {
            let d_in = rng.random_range(2..=4);
            let hidden = rng.random_range(3..=8);
            let k = rng.random_range(2..=4);
            let half = rng.random_range(1..=3);
            let batch = 2 * half;
            let input = random_tensor(rng, &[batch, d_in], 1.5);
            let label_target = random_distribution_rows(rng, batch, k);
            let domain_labels: Vec<usize> = (0..batch).map(|i| usize::from(i >= half)).collect();
            let domain_target = Tensor::one_hot(&domain_labels, 2).expect("labels");
            let params = vec![
                random_tensor(rng, &[d_in, hidden], 1.0),
                random_tensor(rng, &[hidden], 0.5),
                random_tensor(rng, &[k, hidden], 1.0),
                random_tensor(rng, &[k], 0.5),
                random_tensor(rng, &[2, hidden], 1.0),
                random_tensor(rng, &[2], 0.5),
            ];
            let lambda = rng.random_range(0.0..2.0);
            let trial = Trial {
                input,
                label_target,
                domain_target,
                lambda,
                params,
            };
            if trial.min_preactivation() > KINK_MARGIN {
                return trial;
            }
        }
    }

    fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    fn min_preactivation(&self) -> f64 {
        let mut tape = Tape::new();
        let x = tape.constant(self.input.clone());
        let w1 = tape.constant(self.params[0].clone());
        let b1 = tape.constant(self.params[1].clone());
        let h = tape.matmul(x, w1).and_then(|h| tape.add_row(h, b1)).expect("shapes");
        tape.value(h)
            .data()
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    /// Records the graph; returns the parameter leaves and both loss parts.
    fn record(&self, tape: &mut Tape, params: &[Tensor]) -> Result<(Vec<Var>, Var, Var)> {
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let x = tape.constant(self.input.clone());
        let pre = tape.matmul(x, vars[0])?;
        let pre = tape.add_row(pre, vars[1])?;
        let feat = tape.relu(pre)?;

        let logits = tape.matmul_nt(feat, vars[2])?;
        let logits = tape.add_row(logits, vars[3])?;
        let ce = tape.softmax_cross_entropy(logits, &self.label_target)?;
        let probs = tape.softmax(logits)?;
        let sq = tape.mul(probs, probs)?;
        let sq = tape.sum(sq)?;
        let sq = tape.scale(sq, 0.5)?;
        let label_loss = tape.add(ce, sq)?;

        let rows = self.input.rows();
        let half = rows / 2;
        let first: Vec<usize> = (0..half).collect();
        let second: Vec<usize> = (half..rows).collect();
        // Split and re-join the features so the concat rule is exercised too.
        let sel_a = tape.constant(selector(&first, rows));
        let sel_b = tape.constant(selector(&second, rows));
        let fa = tape.matmul(sel_a, feat)?;
        let fb = tape.matmul(sel_b, feat)?;
        let joined = tape.concat_rows(fa, fb)?;
        let reversed = tape.grad_reverse(joined, self.lambda)?;
        let dlogits = tape.matmul_nt(reversed, vars[4])?;
        let dlogits = tape.add_row(dlogits, vars[5])?;
        let domain_loss = tape.softmax_cross_entropy(dlogits, &self.domain_target)?;
        Ok((vars, label_loss, domain_loss))
    }

    fn losses(&self, params: &[Tensor]) -> Losses {
        let mut tape = Tape::new();
        let (_, l, d) = self.record(&mut tape, params).expect("valid trial");
        Losses {
            label: tape.value(l).data()[0],
            domain: tape.value(d).data()[0],
        }
    }

    /// Largest relative error between backward and the finite-difference oracle.
    fn max_relative_error(&self) -> Result<f64> {
        let mut tape = Tape::new();
        let (vars, label, domain) = self.record(&mut tape, &self.params)?;
        let total = tape.add(label, domain)?;
        let grads = tape.backward(total)?;

        let mut worst = 0.0_f64;
        let mut params = self.params.clone();
        for (p, var) in vars.iter().enumerate() {
            let analytic = grads.get(*var).expect("parameter gradient");
            for j in 0..params[p].numel() {
                let orig = params[p].data()[j];
                params[p].data_mut()[j] = orig + FD_STEP;
                let plus = self.losses(&params);
                params[p].data_mut()[j] = orig - FD_STEP;
                let minus = self.losses(&params);
                params[p].data_mut()[j] = orig;

                let d_label = (plus.label - minus.label) / (2.0 * FD_STEP);
                let d_domain = (plus.domain - minus.domain) / (2.0 * FD_STEP);
                // Parameters 0 and 1 sit upstream of the reversal.
                let numeric = if p < 2 {
                    d_label - self.lambda * d_domain
                } else {
                    d_label + d_domain
                };
                let a = analytic.data()[j];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
                worst = worst.max(rel);
            }
        }
        Ok(worst)
    }
}

fn selector(rows: &[usize], total: usize) -> Tensor {
    let mut data = vec![0.0; rows.len() * total];
    for (i, &r) in rows.iter().enumerate() {
        data[i * total + r] = 1.0;
    }
    Tensor::matrix(rows.len(), total, data).expect("shape")
}

/// Runs `trials` random gradient checks and reports the worst relative error.
pub fn gradcheck_suite(trials: usize, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport {
        trials,
        parameters_checked: 0,
        max_parameters_per_trial: 0,
        max_relative_error: 0.0,
        worst_trial: 0,
    };
    for t in 0..trials {
        let trial = Trial::sample(&mut rng);
        let n = trial.parameter_count();
        report.parameters_checked += n;
        report.max_parameters_per_trial = report.max_parameters_per_trial.max(n);
        let err = trial.max_relative_error()?;
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_trial = t;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let report = gradcheck_suite(5, 11).unwrap();
        assert_eq!(report.trials, 5);
        assert!(report.max_parameters_per_trial <= 200);
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn suite_is_deterministic() {
        assert_eq!(gradcheck_suite(3, 2).unwrap(), gradcheck_suite(3, 2).unwrap());
    }
}
