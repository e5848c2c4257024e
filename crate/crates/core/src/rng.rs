//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from [`ChaCha8Rng`], whose
//! output sequence is specified independently of platform and word size.
//! Sub-streams are keyed with [`mix_seed`], a SplitMix64 finalizer folded
//! over the key words, so `(seed, a, b)` and `(seed, b, a)` give unrelated
//! streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type Rng = ChaCha8Rng;

/// Stream tags so different consumers of the same trial seed never share a stream.
pub mod stream {
    pub const MATRIX: u64 = 0x4d41_5452;
    pub const SIGNS: u64 = 0x5349_474e;
    pub const SIGNAL: u64 = 0x5349_474c;
    pub const NOISE: u64 = 0x4e4f_4953;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `words` into `seed`, one SplitMix64 round per word.
pub fn mix_seed(seed: u64, words: &[u64]) -> u64 {
    words
        .iter()
        .fold(splitmix64(seed), |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

pub fn rng_from(seed: u64, tag: u64) -> Rng {
    Rng::seed_from_u64(mix_seed(seed, &[tag]))
}
