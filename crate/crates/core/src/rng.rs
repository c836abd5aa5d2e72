//! Seeded random streams.
//!
//! Every random draw in the lab comes from a ChaCha8 stream whose seed is a
//! pure function of the run seed and a path of integer labels (step, prompt
//! index, purpose). Work can therefore be split across threads or resumed
//! from a checkpoint without changing a single draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and a path of labels.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &label| splitmix64(acc ^ splitmix64(label)))
}

pub fn stream(seed: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, path))
}

/// Purpose labels that keep independent streams apart.
pub mod purpose {
    pub const PROMPT: u64 = 1;
    pub const ROLLOUT: u64 = 2;
    pub const PROBE: u64 = 3;
    pub const EVAL: u64 = 4;
    pub const DIAGNOSE: u64 = 5;
}
