//! Seed derivation. Every random stream in the crate is a ChaCha8 stream
//! keyed by a seed mixed from the caller's master seed and a purpose tag,
//! so results do not depend on call order or platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes an ordered list of words into one seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut acc = 0x6a09_e667_f3bc_c909u64;
    for &p in parts {
        acc = splitmix64(acc ^ splitmix64(p));
    }
    acc
}

/// Stable 64-bit tag for a string label.
pub fn tag(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn stream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(&[1, 2]).random();
        let b: u64 = stream(&[1, 2]).random();
        let c: u64 = stream(&[2, 1]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
