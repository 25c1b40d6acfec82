//! Deterministic sub-seed derivation.
//!
//! Every randomized component (init, shuffling, noise, estimator draws)
//! derives its stream from a base seed and a role tag, so whole runs are
//! reproducible bit-for-bit from a single seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent sub-seed from a base seed and a tag.
pub fn derive(base: u64, tag: u64) -> u64 {
    splitmix64(base ^ splitmix64(tag).rotate_left(17))
}

/// Seeded RNG for a (base, tag) pair.
pub fn rng(base: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, tag))
}
