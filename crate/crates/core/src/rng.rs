//! Seed derivation. Every random stream in the crate is a `ChaCha8Rng`
//! seeded from a root seed mixed with the indices that identify its use
//! (step, image, view, ...), so streams never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(root), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn stream(root: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, parts))
}
