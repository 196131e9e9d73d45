//! Seed derivation for reproducible, order-independent randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `stream` derived from `master`; distinct streams never
/// share a generator regardless of the order in which they are consumed.
pub fn derive_seed(master: u64, stream: &[u64]) -> u64 {
    stream
        .iter()
        .fold(mix64(master), |acc, &s| mix64(acc ^ mix64(s.wrapping_add(0xA5A5_A5A5))))
}

pub fn rng_for(master: u64, stream: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream))
}
