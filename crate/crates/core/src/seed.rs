//! Seed derivation.
//!
//! Every randomized stage derives its own stream from a single master seed, a
//! string tag, and an index. Derivation is a fixed splitmix64 mix, so the
//! mapping is stable across runs and platforms, and parallel or serial
//! execution of independent stages draws identical streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `(master, tag, index)`.
pub fn derive(master: u64, tag: &str, index: u64) -> u64 {
    // FNV-1a over the tag keeps distinct stages on distinct streams even when
    // master and index collide.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(master ^ splitmix64(h) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// RNG for a derived stream.
pub fn rng(master: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, tag, index))
}
