//! Stable seed derivation. Every random stream in the crate is a ChaCha8
//! generator seeded from values mixed here, so results never depend on the
//! platform, thread count or std's randomized hashers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a of a string, for folding identifiers into seeds.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Order-sensitive mix of several words into one seed.
pub fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5eed_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Per-scene seed for one epoch of augmentation.
pub fn scene_seed(global_seed: u64, image_id: &str, epoch: u32) -> u64 {
    mix(&[global_seed, hash_str(image_id), epoch as u64])
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_values() {
        // guards against accidental changes to the derivation
        assert_eq!(hash_str(""), FNV_OFFSET);
        assert_eq!(hash_str("a"), 0xaf63_dc4c_8601_ec8c);
        assert_ne!(mix(&[1, 2]), mix(&[2, 1]));
        assert_eq!(scene_seed(7, "000001", 3), scene_seed(7, "000001", 3));
        assert_ne!(scene_seed(7, "000001", 3), scene_seed(7, "000001", 4));
    }
}
