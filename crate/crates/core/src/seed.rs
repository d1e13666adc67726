//! Seed splitting.
//!
//! A run has one 64-bit seed. Each consumer gets its own stream from
//! `derive_seed(seed, tag)`: the tag is hashed with 64-bit FNV-1a, xored into
//! the seed and passed through the SplitMix64 finalizer. New tags never
//! perturb existing streams. Per-item streams inside a consumer use
//! `base ^ index`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fnv1a64(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    splitmix64(seed ^ fnv1a64(tag))
}

pub fn item_seed(base: u64, index: u64) -> u64 {
    base ^ index
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
