//! Seeded stream derivation.
//!
//! Every random draw in this library is keyed: a master seed, a domain label,
//! and the draw's coordinates determine the value. Draws are therefore
//! independent of query order, which makes transcript comparisons between
//! coupled runs meaningful instead of accidental.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Counter-based stream generator used everywhere.
pub type Stream = ChaCha12Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(acc: u64, bytes: &[u8]) -> u64 {
    let mut h = acc;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Collapse seed, label, and length-prefixed parts into one 64-bit key.
pub fn derive64(seed: u64, label: &str, parts: &[&[u8]]) -> u64 {
    let mut h = fnv1a(FNV_OFFSET ^ seed, label.as_bytes());
    for p in parts {
        h = fnv1a(h, &(p.len() as u64).to_le_bytes());
        h = fnv1a(h, p);
    }
    splitmix(h ^ seed.rotate_left(32))
}

/// Deterministic sub-stream for (seed, label, parts).
pub fn stream(seed: u64, label: &str, parts: &[&[u8]]) -> Stream {
    ChaCha12Rng::seed_from_u64(derive64(seed, label, parts))
}

/// Integer-indexed sub-stream.
pub fn stream_idx(seed: u64, label: &str, idx: u64) -> Stream {
    stream(seed, label, &[&idx.to_le_bytes()])
}
