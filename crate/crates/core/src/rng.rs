//! Seed derivation helpers.
//!
//! Every randomized step in the simulator draws from its own ChaCha stream
//! whose seed is derived from the experiment seed plus a small tuple of
//! stream coordinates (node id, round, purpose), so results do not depend on
//! execution order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a list of stream coordinates.
pub fn derive_seed(seed: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(mix64(seed), |acc, &c| mix64(acc ^ mix64(c)))
}

pub fn rng_for(seed: u64, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, coords))
}

/// Stream tags, kept in one place so two purposes never share a stream.
pub mod stream {
    pub const SYNTHETIC: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const DRIFT: u64 = 3;
    pub const INIT: u64 = 4;
    pub const TRAIN: u64 = 5;
    pub const KMEANS: u64 = 6;
    pub const DRIFTED_NODES: u64 = 7;
}
