//! Deterministic seed derivation.
//!
//! Training needs many independent RNG streams (per-epoch shuffles, per-sample
//! dropout masks) whose contents must not depend on execution order or thread
//! count. Each stream gets its own seed derived from the master seed plus a
//! purpose tag and indices, so any stream can be reconstructed in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keeping derived streams disjoint.
pub const STREAM_INIT: u64 = 0x01;
pub const STREAM_SHUFFLE: u64 = 0x02;
pub const STREAM_MASKS: u64 = 0x03;
pub const STREAM_SYNTH: u64 = 0x04;

/// SplitMix64 finalizer; a well-mixed 64-bit permutation.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Fold a master seed and a list of tags/indices into one well-mixed seed.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for &t in tags {
        h = splitmix64(h ^ t);
    }
    h
}

/// Construct a ChaCha stream for `(master, tags...)`.
pub fn derive_rng(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}
