//! Seed splitting.
//!
//! Every command takes one root seed. Sub-seeds are derived as
//! `splitmix64(root ^ splitmix64(fnv1a(stream) ^ index))`, so a stream name plus
//! an index (shift number, tick, round) always maps to the same generator
//! regardless of evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

pub fn derive(root: u64, stream: &str, index: u64) -> u64 {
    splitmix64(root ^ splitmix64(fnv1a(stream) ^ index))
}

/// Seed for the stochastic part of tick `tick` of an episode.
pub fn tick_seed(episode_seed: u64, tick: u32) -> u64 {
    derive(episode_seed, "tick", tick as u64)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
