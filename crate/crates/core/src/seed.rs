//! Seed derivation. Every random stream in a run is a pure function of the
//! root seed and a stream tag.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer over `seed ⊕ stream`, used to derive child seeds.
pub fn derive(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags, kept in one place so derived seeds never collide by accident.
pub mod stream {
    pub const HEAD_INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const DATA_TRAIN: u64 = 10;
    pub const DATA_VAL: u64 = 11;
    pub const DATA_TEST: u64 = 12;
    pub const SPLIT: u64 = 20;
}
