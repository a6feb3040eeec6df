//! Seed plumbing. Every random decision in a run comes from a ChaCha8 stream
//! identified by `(seed, stream id)`, so independent consumers never share state.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// A fresh 64-bit seed drawn from stream `id`.
pub fn derive_seed(seed: u64, id: u64) -> u64 {
    stream(seed, id).next_u64()
}
