//! Hierarchical, reproducible random streams.
//!
//! Every random quantity in a run is drawn from a ChaCha stream whose seed is
//! derived from the run seed and a path of integer labels, so parallel work
//! can be split arbitrarily without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Labels for the top-level stream families.
pub mod label {
    pub const PRIOR_MOMENTS: u64 = 0x5052_494f;
    pub const UTILITY: u64 = 0x5554_494c;
    pub const ACCEPT: u64 = 0x4143_4350;
    pub const FINAL: u64 = 0x4649_4e41;
    pub const START: u64 = 0x5354_5254;
    pub const SYNTH: u64 = 0x5359_4e54;
    pub const WINDOW: u64 = 0x5749_4e44;
    pub const JITTER: u64 = 0x4a49_5454;
    pub const MCMC: u64 = 0x4d43_4d43;
    pub const MARGINAL: u64 = 0x4d41_5247;
    pub const VALIDATE: u64 = 0x5641_4c49;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a child seed from `seed` and a label path.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(0x632b_e59b_d9b4_e019))))
}

pub fn stream(seed: u64, path: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive(seed, path))
}
