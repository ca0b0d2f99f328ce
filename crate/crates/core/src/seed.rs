//! Seed derivation.
//!
//! Every random draw in the pipeline comes from a ChaCha8 stream whose seed
//! is derived from the global seed and a stable key, so a participant's
//! draws never depend on which other participants are present.
//!
//! Mixing function (64-bit):
//!
//! ```text
//! fnv1a64(bytes)   = FNV-1a, offset 0xcbf29ce484222325, prime 0x100000001b3
//! splitmix64(z)    = z += 0x9e3779b97f4a7c15;
//!                    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9;
//!                    z = (z ^ (z >> 27)) * 0x94d049bb133111eb;
//!                    z ^ (z >> 31)
//! mix(a, b)        = splitmix64(a ^ splitmix64(b))
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn splitmix64(z: u64) -> u64 {
    let mut z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn mix(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b))
}

/// Seed for a named substream, e.g. `substream(global, &["P0001", "random", "3"])`.
pub fn substream(global: u64, parts: &[&str]) -> u64 {
    parts
        .iter()
        .fold(global, |acc, p| mix(acc, fnv1a64(p.as_bytes())))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_known_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn splitmix_reference() {
        // first output of the reference splitmix64 generator seeded with 0
        assert_eq!(splitmix64(0), 0xe220a8397b1dcdaf);
    }

    #[test]
    fn substreams_differ_by_key() {
        assert_ne!(substream(7, &["a"]), substream(7, &["b"]));
        assert_eq!(substream(7, &["a", "x"]), substream(7, &["a", "x"]));
    }
}
