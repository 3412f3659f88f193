//! Seeding policy.
//!
//! Every random stream in the toolkit is a ChaCha8 generator
//! (`rand_chacha::ChaCha8Rng`) created through [`stream`]. Sub-streams are
//! keyed by a master seed, a stage tag, and an index, mixed with SplitMix64,
//! so per-image and per-sample streams do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stage tags keep streams of different pipeline stages independent.
pub mod stage {
    pub const DATASET: u64 = 0x01;
    pub const INIT: u64 = 0x02;
    pub const TRAIN: u64 = 0x03;
    pub const LIME: u64 = 0x04;
    pub const RANDOM_BASELINE: u64 = 0x05;
    pub const HOLDOUT: u64 = 0x06;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed for `(master, stage, index)`.
pub fn derive_seed(master: u64, stage: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stage) ^ index)
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(master: u64, stage: u64, index: u64) -> Rng {
    seeded(derive_seed(master, stage, index))
}
