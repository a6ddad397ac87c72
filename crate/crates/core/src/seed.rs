//! Seed derivation.
//!
//! All randomness in the crate flows from a single master seed. Sub-seeds
//! for pools, trials, streams and detector internals are derived with a
//! SplitMix64 mix of `(seed, tag)`, so a trial's draws never depend on how
//! much randomness any other trial consumed, and results are reproducible
//! across platforms and worker counts.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 output function.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed from `seed` and a stream/purpose tag.
pub fn derive(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// ChaCha8 generator seeded from a derived sub-seed.
pub fn rng(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag))
}
