//! Derivation of per-component seeds from one top-level seed.
//!
//! `derive_seed(root, label, index)` hashes the label with FNV-1a, mixes it
//! with the root and the index, and finishes with the SplitMix64 mixer. The
//! labels used by the pipelines are listed in [`labels`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Component labels passed to [`derive_seed`].
pub mod labels {
    pub const TRAIN_DATA: &str = "data/train";
    pub const EVAL_DATA: &str = "data/eval";
    pub const DEMO_DATA: &str = "data/demo";
    pub const MODEL_INIT: &str = "model/init";
    pub const SHUFFLE: &str = "train/shuffle";
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ fnv1a(label)).wrapping_add(index))
}

/// A deterministic generator for the given derived seed.
pub fn rng_for(root: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_separates_components() {
        assert_eq!(derive_seed(7, "a", 0), derive_seed(7, "a", 0));
        assert_ne!(derive_seed(7, "a", 0), derive_seed(7, "b", 0));
        assert_ne!(derive_seed(7, "a", 0), derive_seed(7, "a", 1));
        assert_ne!(derive_seed(7, "a", 0), derive_seed(8, "a", 0));
    }
}
