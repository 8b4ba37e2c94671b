//! Seed derivation.
//!
//! Every random stream in the toolkit is a ChaCha8 generator keyed by a seed
//! derived from a root seed plus a path of integers (frame index, epoch, ...).
//! Any schedule that evaluates the same keys yields the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `parts` into `seed`, one SplitMix64 round per part.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(GOLDEN))))
}

pub fn rng_for(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, parts))
}

/// Stream tags so unrelated consumers of one root seed never collide.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const FRAME: u64 = 2;
    pub const PARAMS: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const MASK: u64 = 5;
    pub const VAL_MASK: u64 = 6;
    pub const SHOTS: u64 = 7;
    pub const PROBE: u64 = 8;
    pub const NOISE: u64 = 9;
}
