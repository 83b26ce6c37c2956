//! Deterministic seed derivation.
//!
//! Every random decision in the pipeline draws from a ChaCha stream seeded by
//! a stable mix of the global seed and a context label, so independent stages
//! (and independent jobs within a stage) never share or race a generator.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mix a global seed with a context label into a child seed.
///
/// Uses an FNV-1a fold over the label followed by splitmix64 finalization;
/// stable across platforms and releases.
pub fn derive(global: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ global.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h)
}

/// Deterministic RNG for a (global seed, context label) pair.
pub fn rng(global: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(global, label))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
