//! Deterministic seed derivation.
//!
//! Every randomized component takes its own seed derived from the global
//! run seed and a fixed textual tag, so that adding or reordering stages
//! never perturbs the streams of unrelated stages.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive a child seed from `base` and a stable tag (FNV-1a over the tag,
/// folded into the base with an odd multiplier).
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= base.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    h.wrapping_mul(0xff51_afd7_ed55_8ccd)
}

/// Seeded ChaCha stream; the fixed algorithm keeps runs reproducible
/// across platforms and releases.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_tags_give_distinct_seeds() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
    }

    #[test]
    fn derivation_is_stable() {
        assert_eq!(derive_seed(42, "tuning"), derive_seed(42, "tuning"));
    }
}
