//! Seeded per-worker, per-round random streams.
//!
//! Every stochastic draw in a run comes from a stream keyed by
//! `(seed, purpose, worker, round)`, so results do not depend on the order in
//! which workers are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stream {
    Batch = 1,
    Attack = 2,
    Partition = 3,
    Subsample = 4,
    Synthetic = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn stream(seed: u64, purpose: Stream, worker: u64, round: u64) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ purpose as u64);
    h = splitmix64(h ^ worker);
    h = splitmix64(h ^ round);
    ChaCha8Rng::seed_from_u64(h)
}
