//! Seed plumbing. Every random stream is a ChaCha8 generator whose seed is
//! derived from a campaign seed and a fixed stream tag, so runs are
//! reproducible bit for bit and streams never overlap by accident.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_PERTURBATION: u64 = 0x7065_7274;
pub const STREAM_MEASUREMENT: u64 = 0x6d65_6173;
pub const STREAM_POOL: u64 = 0x706f_6f6c;
pub const STREAM_SAMPLER: u64 = 0x7361_6d70;
pub const STREAM_HYPER: u64 = 0x6879_7065;
pub const STREAM_BASELINE: u64 = 0x6261_7365;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix(mix(seed.wrapping_add(0x9e37_79b9_7f4a_7c15)) ^ stream)
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}
