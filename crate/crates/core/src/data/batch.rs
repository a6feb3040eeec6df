use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchStrategy {
    /// Split a fixed budget between the domains in proportion to their sizes.
    Proportional,
    /// Equal batches; the smaller domain is repeated to match the larger one.
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub strategy: BatchStrategy,
    pub batch_source: usize,
    pub batch_target: usize,
    /// Copies of the smaller domain per epoch (1 for proportional plans).
    pub repeats: usize,
    pub steps_per_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchIndices {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Proportional: the smaller domain gets `round_half_up(budget · n_small / total)`,
/// kept in `[1, budget − 1]`, and the larger domain the rest. Concat: `budget`
/// is the per-domain batch size and the smaller domain is repeated
/// `ceil(larger / smaller)` times.
pub fn plan_batches(strategy: BatchStrategy, n_source: usize, n_target: usize, budget: usize) -> Result<BatchPlan> {
    if n_source == 0 || n_target == 0 {
        return Err(validation("n", "both domains need at least one sample"));
    }
    if budget < 2 {
        return Err(validation("budget", format!("{budget} is below the minimum of 2")));
    }
    let plan = match strategy {
        BatchStrategy::Proportional => {
            let total = (n_source + n_target) as u128;
            let share = |n: usize| {
                let raw = (2 * budget as u128 * n as u128 + total) / (2 * total);
                (raw as usize).clamp(1, budget - 1)
            };
            let (batch_source, batch_target) = if n_source < n_target {
                let s = share(n_source);
                (s, budget - s)
            } else {
                let t = share(n_target);
                (budget - t, t)
            };
            let steps = n_source
                .div_ceil(batch_source)
                .max(n_target.div_ceil(batch_target));
            BatchPlan {
                strategy,
                batch_source,
                batch_target,
                repeats: 1,
                steps_per_epoch: steps,
            }
        }
        BatchStrategy::Concat => {
            let (large, small) = (n_source.max(n_target), n_source.min(n_target));
            BatchPlan {
                strategy,
                batch_source: budget,
                batch_target: budget,
                repeats: large.div_ceil(small),
                steps_per_epoch: large.div_ceil(budget),
            }
        }
    };
    Ok(plan)
}

fn shuffled<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Fresh permutations of `0..n`, concatenated and cut to `len`.
fn tiled<R: Rng + ?Sized>(n: usize, len: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(len + n);
    while out.len() < len {
        out.extend(shuffled(n, rng));
    }
    out.truncate(len);
    out
}

impl BatchPlan {
    /// Index batches for one epoch. Concat plans visit every sample of the
    /// larger domain exactly once; the final batch may be short, with equal
    /// lengths on both sides. Proportional plans always emit full batches and
    /// cover each domain at least once.
    pub fn epoch<R: Rng + ?Sized>(&self, n_source: usize, n_target: usize, rng_source: &mut R, rng_target: &mut R) -> Vec<BatchIndices> {
        match self.strategy {
            BatchStrategy::Concat => {
                let len = n_source.max(n_target);
                let src = tiled(n_source, len, rng_source);
                let tgt = tiled(n_target, len, rng_target);
                src.chunks(self.batch_source)
                    .zip(tgt.chunks(self.batch_target))
                    .map(|(s, t)| BatchIndices {
                        source: s.to_vec(),
                        target: t.to_vec(),
                    })
                    .collect()
            }
            BatchStrategy::Proportional => {
                let steps = self.steps_per_epoch;
                let src = tiled(n_source, steps * self.batch_source, rng_source);
                let tgt = tiled(n_target, steps * self.batch_target, rng_target);
                src.chunks(self.batch_source)
                    .zip(tgt.chunks(self.batch_target))
                    .map(|(s, t)| BatchIndices {
                        source: s.to_vec(),
                        target: t.to_vec(),
                    })
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use alloc::vec;
    use proptest::prelude::*;

    const AMAZON: usize = 2817;
    const DSLR: usize = 498;
    const WEBCAM: usize = 795;

    #[test]
    fn proportional_examples() {
        let dw = plan_batches(BatchStrategy::Proportional, DSLR, WEBCAM, 52).unwrap();
        assert_eq!((dw.batch_source, dw.batch_target), (20, 32));
        let aw = plan_batches(BatchStrategy::Proportional, AMAZON, WEBCAM, 58).unwrap();
        assert_eq!((aw.batch_source, aw.batch_target), (45, 13));
    }

    #[test]
    fn concat_example() {
        let p = plan_batches(BatchStrategy::Concat, AMAZON, DSLR, 32).unwrap();
        assert_eq!(p.repeats, 6);
        assert!(p.repeats * DSLR >= AMAZON);
        assert_eq!((p.batch_source, p.batch_target), (32, 32));
    }

    #[test]
    fn budget_too_small() {
        assert!(plan_batches(BatchStrategy::Proportional, 5, 5, 1).is_err());
        assert!(plan_batches(BatchStrategy::Concat, 5, 0, 8).is_err());
    }

    #[test]
    fn concat_epoch_covers_larger_once() {
        let p = plan_batches(BatchStrategy::Concat, 10, 23, 4).unwrap();
        let (mut a, mut b) = (stream(1, 0), stream(1, 1));
        let batches = p.epoch(10, 23, &mut a, &mut b);
        assert_eq!(batches.len(), p.steps_per_epoch);
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.target.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
        assert!(batches.iter().all(|b| b.source.len() == b.target.len()));
        assert_eq!(batches.last().unwrap().source.len(), 3);
    }

    proptest! {
        #[test]
        fn proportional_sums_to_budget(ns in 1usize..5000, nt in 1usize..5000, budget in 2usize..300) {
            let p = plan_batches(BatchStrategy::Proportional, ns, nt, budget).unwrap();
            prop_assert_eq!(p.batch_source + p.batch_target, budget);
            prop_assert!(p.batch_source >= 1 && p.batch_target >= 1);
        }

        #[test]
        fn proportional_monotone(ns in 1usize..3000, nt in 1usize..3000, budget in 2usize..128, bump in 1usize..500) {
            let a = plan_batches(BatchStrategy::Proportional, ns, nt, budget).unwrap();
            let b = plan_batches(BatchStrategy::Proportional, ns + bump, nt, budget).unwrap();
            prop_assert!(b.batch_source >= a.batch_source);
        }

        #[test]
        fn concat_every_large_sample_once(ns in 1usize..80, nt in 1usize..80, budget in 2usize..16, seed in any::<u64>()) {
            let p = plan_batches(BatchStrategy::Concat, ns, nt, budget).unwrap();
            prop_assert!(p.repeats * ns.min(nt) >= ns.max(nt));
            let (mut a, mut b) = (stream(seed, 0), stream(seed, 1));
            let batches = p.epoch(ns, nt, &mut a, &mut b);
            let mut large: Vec<usize> = batches
                .iter()
                .flat_map(|x| if ns >= nt { x.source.clone() } else { x.target.clone() })
                .collect();
            large.sort_unstable();
            prop_assert_eq!(large, (0..ns.max(nt)).collect::<Vec<_>>());
        }

        #[test]
        fn proportional_epoch_covers_both(ns in 1usize..200, nt in 1usize..200, budget in 2usize..40, seed in any::<u64>()) {
            let p = plan_batches(BatchStrategy::Proportional, ns, nt, budget).unwrap();
            let (mut a, mut b) = (stream(seed, 0), stream(seed, 1));
            let batches = p.epoch(ns, nt, &mut a, &mut b);
            let mut seen_s = vec![false; ns];
            let mut seen_t = vec![false; nt];
            for x in &batches {
                prop_assert_eq!(x.source.len(), p.batch_source);
                prop_assert_eq!(x.target.len(), p.batch_target);
                x.source.iter().for_each(|&i| seen_s[i] = true);
                x.target.iter().for_each(|&i| seen_t[i] = true);
            }
            prop_assert!(seen_s.iter().all(|&v| v) && seen_t.iter().all(|&v| v));
        }
    }
}
