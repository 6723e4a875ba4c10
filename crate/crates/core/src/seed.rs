//! Splittable seeds.
//!
//! A master seed expands into a tree of child seeds with a counter scheme:
//! `child(i) = mix(mix(parent) + (i + 1) * GAMMA)` where `mix` is the
//! SplitMix64 finalizer and `GAMMA` the 64-bit golden-ratio constant. Every
//! trial, worker and sub-stream derives its RNG from a path in this tree, so
//! results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A node in the seed tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Seed(pub u64);

impl Seed {
    pub fn child(self, index: u64) -> Seed {
        Seed(mix64(
            mix64(self.0).wrapping_add(index.wrapping_add(1).wrapping_mul(GAMMA)),
        ))
    }

    /// Child along a named stream; `tag` should be a short constant string.
    pub fn stream(self, tag: &str) -> Seed {
        let h = tag.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x100_0000_01B3)
        });
        self.child(h)
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}
