//! Seed derivation. Every random stream in the toolkit is keyed off the
//! master seed plus a label, so work can be reordered or parallelised
//! without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derives a child seed from `(parent, tag, index)`.
pub fn derive(parent: u64, tag: &str, index: u64) -> u64 {
    splitmix(splitmix(parent ^ fnv1a(tag.as_bytes())).wrapping_add(splitmix(index)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_separates_tags_and_indices() {
        let a = derive(7, "USB", 0);
        assert_eq!(a, derive(7, "USB", 0));
        assert_ne!(a, derive(7, "USB", 1));
        assert_ne!(a, derive(7, "fan", 0));
        assert_ne!(a, derive(8, "USB", 0));
    }
}
