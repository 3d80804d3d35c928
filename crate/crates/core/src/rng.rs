//! Deterministic random streams.
//!
//! Every stochastic component takes its generator explicitly. Work that is
//! spread over threads derives an independent stream per unit of work from a
//! base seed and a small key, so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used throughout the crate.
pub type SkmRng = ChaCha8Rng;

/// SplitMix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a base seed together with a key path into a new seed.
pub fn derive_seed(base: u64, key: &[u64]) -> u64 {
    key.iter()
        .fold(mix64(base), |acc, &k| mix64(acc ^ mix64(k.wrapping_add(0x632B_E59B_D9B4_E019))))
}

/// A generator for the sub-stream `key` of `base`.
pub fn substream(base: u64, key: &[u64]) -> SkmRng {
    SkmRng::seed_from_u64(derive_seed(base, key))
}

pub fn from_seed(seed: u64) -> SkmRng {
    SkmRng::seed_from_u64(seed)
}
