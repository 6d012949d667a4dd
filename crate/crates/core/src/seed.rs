//! Seed derivation.
//!
//! Every random stream in a run is derived from one master seed. A child seed
//! is `splitmix64(master ^ splitmix64(stream))`, and streams are tagged by a
//! small integer plus an index so that, for example, tree 7 of a forest and
//! fold 7 of a cross-validation never share a generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags used across the crate.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const FOLDS: u64 = 2;
    pub const FOREST_TREE: u64 = 3;
    pub const BOOSTING: u64 = 4;
    pub const NETWORK_INIT: u64 = 5;
    pub const NETWORK_SHUFFLE: u64 = 6;
    pub const PERMUTATION: u64 = 7;
    pub const FOLD_MODEL: u64 = 8;
    pub const MODEL: u64 = 9;
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `(tag, index)` under `master`.
pub fn derive(master: u64, tag: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(tag.wrapping_mul(0x1000_0000_01B3) ^ splitmix64(index)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, tag: u64, index: u64) -> ChaCha8Rng {
    rng(derive(master, tag, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ() {
        assert_ne!(derive(1, stream::FOLDS, 0), derive(1, stream::FOREST_TREE, 0));
        assert_ne!(derive(1, stream::FOLDS, 0), derive(1, stream::FOLDS, 1));
        assert_eq!(derive(9, 3, 4), derive(9, 3, 4));
    }
}
