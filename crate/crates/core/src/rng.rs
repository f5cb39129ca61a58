//! Seeded random streams.
//!
//! Every stochastic component owns a [`SimRng`] derived from a root seed and a
//! textual tag, so adding a component never perturbs the streams of others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `root` and a component tag.
pub fn derive_seed(root: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then mix with the root.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(root ^ splitmix64(h))
}

/// Derives a child seed from `root` and an index.
pub fn derive_seed_idx(root: u64, tag: &str, idx: u64) -> u64 {
    splitmix64(derive_seed(root, tag) ^ splitmix64(idx.wrapping_add(1)))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
