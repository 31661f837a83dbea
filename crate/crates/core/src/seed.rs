//! Seed derivation.
//!
//! Every stochastic subsystem draws from its own stream. A stream seed is
//! `splitmix64(root ^ fnv1a64(tag))`, so the same root and tag always give the
//! same stream and distinct tags give unrelated streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn fnv1a64(tag: &str) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for byte in tag.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the subsystem named `tag` under `root`.
pub fn derive(root: u64, tag: &str) -> u64 {
    splitmix64(root ^ fnv1a64(tag))
}

/// Seed for item `index` of a subsystem (per scene, per epoch, ...).
pub fn derive_indexed(root: u64, tag: &str, index: u64) -> u64 {
    splitmix64(derive(root, tag) ^ splitmix64(index))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
