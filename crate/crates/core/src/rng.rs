//! Deterministic seed derivation.
//!
//! Every command takes one root seed; each component derives its own stream
//! with [`derive_seed`] so runs are reproducible and component order never
//! matters. The derivation is pinned: splitmix64 over the root seed, an
//! FNV-1a hash of the domain label, and the item index.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Derive a child seed from (root, domain label, index).
pub fn derive_seed(root: u64, domain: &str, index: u64) -> u64 {
    splitmix64(root ^ fnv1a(domain) ^ splitmix64(index))
}

/// Seeded ChaCha8 stream for a component.
pub fn stream(root: u64, domain: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, domain, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_separates_domains() {
        assert_eq!(derive_seed(7, "scene", 0), derive_seed(7, "scene", 0));
        assert_ne!(derive_seed(7, "scene", 0), derive_seed(7, "scene", 1));
        assert_ne!(derive_seed(7, "scene", 0), derive_seed(7, "train", 0));
        assert_ne!(derive_seed(7, "scene", 0), derive_seed(8, "scene", 0));
    }
}
