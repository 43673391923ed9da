//! Seed derivation for reproducible, independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream tags keep draws for different purposes apart even when the
/// remaining coordinates coincide.
pub mod tag {
    pub const SCORE: u64 = 0x5c0e;
    pub const SCORE_INNER: u64 = 0x5c1e;
    pub const PROBE: u64 = 0x9b0b;
    pub const LAW: u64 = 0x1a3;
    pub const RANDOM_SELECT: u64 = 0x4a4d;
    pub const PARTITION: u64 = 0x9a47;
    pub const SAMPLE: u64 = 0x5a39;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of coordinates into a new seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(base: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(base, path))
}
