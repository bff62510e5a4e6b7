//! Seed plumbing. Every stochastic step draws from a ChaCha stream whose
//! seed is derived from the run seed and a fixed stream tag, so streams
//! never depend on how many numbers another stream consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix(seed ^ mix(stream))
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream))
}

pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

// stream tags
pub const INIT_RECOMMENDER: u64 = 1;
pub const INIT_POLICY: u64 = 2;
pub const PRETRAIN: u64 = 3;
pub const META_SET: u64 = 4;
pub const TRAJECTORIES: u64 = 5;
pub const BATCHES: u64 = 6;
pub const REPLAY: u64 = 7;
pub const DROP_SWEEP: u64 = 8;
pub const SIMULATOR: u64 = 9;
pub const SYNTHETIC: u64 = 10;
