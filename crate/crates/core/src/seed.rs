//! Root-seed splitting. Every component derives its own RNG stream from a
//! single root seed and a component tag, so reordering components never
//! shifts another component's random numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a root seed with a component tag into a child seed.
pub fn derive(root: u64, tag: &str) -> u64 {
    tag.bytes()
        .fold(splitmix64(root), |acc, b| splitmix64(acc ^ u64::from(b)))
}

/// Child seed indexed by an integer (per task, per step, ...).
pub fn derive_indexed(root: u64, tag: &str, index: u64) -> u64 {
    splitmix64(derive(root, tag) ^ splitmix64(index.wrapping_add(1)))
}

pub fn rng(root: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, tag))
}

pub fn rng_indexed(root: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_indexed(root, tag, index))
}
