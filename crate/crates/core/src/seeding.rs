//! Deterministic seed derivation. Every random stream in a run is derived
//! from the run seed and a fixed tag so streams never alias.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod tags {
    pub const ENV: u64 = 1;
    pub const ENV_NOISE_TV: u64 = 2;
    pub const FEATURE_NOISE: u64 = 3;
    pub const ENCODER: u64 = 4;
    pub const POLICY_INIT: u64 = 5;
    pub const ACTIONS: u64 = 6;
    pub const MINIBATCH: u64 = 7;
    pub const ENSEMBLE: u64 = 8;
    pub const FORWARD_MODEL: u64 = 9;
    pub const RND: u64 = 10;
    pub const REPLAY: u64 = 11;
    pub const STUDY: u64 = 12;
}

/// SplitMix64 finalizer applied to `base` mixed with `tag`.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(base: u64, tag: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(base, tag))
}
