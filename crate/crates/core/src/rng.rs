//! Seeded random-stream derivation.
//!
//! Every source of randomness in a run is a pure function of the run seed plus
//! a structural address (purpose tag, epoch, sample index, ...). Streams never
//! share state, so batching, checkpoint/resume, and threading cannot change
//! what any individual sample sees.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for combining seed material.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn tag_hash(tag: &str) -> u64 {
    // FNV-1a over the tag bytes.
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in tag.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derive an independent stream for (seed, purpose tag, two indices).
pub fn stream(seed: u64, tag: &str, a: u64, b: u64) -> ChaCha8Rng {
    let s = mix(seed ^ mix(tag_hash(tag)) ^ mix(a).rotate_left(17) ^ mix(b).rotate_left(43));
    ChaCha8Rng::seed_from_u64(s)
}

/// Single-index convenience wrapper around [`stream`].
pub fn stream1(seed: u64, tag: &str, a: u64) -> ChaCha8Rng {
    stream(seed, tag, a, 0)
}
