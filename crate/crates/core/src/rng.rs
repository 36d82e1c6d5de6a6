//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! whose seed is derived from the master seed plus a stream tag, so runs are
//! reproducible and independent streams never alias.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `master`, a stream tag and an index.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    // FNV-1a over the tag, then mixed with the master seed and index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(master ^ h).wrapping_add(index))
}

pub fn stream(master: u64, tag: &str, index: u64) -> Rng {
    seeded(derive_seed(master, tag, index))
}
