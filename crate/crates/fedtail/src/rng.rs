//! Deterministic, named random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream addressed by
//! (seed, name). The name is hashed into the stream id, so independent
//! components never share a sequence and runs reproduce bit-for-bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a 64-bit hash, used to turn stream names into stream ids.
pub fn hash_name(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A reproducible generator for the stream `name` under `seed`.
pub fn stream_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(hash_name(name));
    rng
}

/// Derives a child seed from a base seed and a path of tags.
pub fn derive_seed(base: u64, tags: &[&str]) -> u64 {
    let mut h = base ^ 0x9e37_79b9_7f4a_7c15;
    for t in tags {
        h = h.rotate_left(17) ^ hash_name(t);
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    }
    h
}
