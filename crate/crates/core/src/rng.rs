//! Seed derivation for independent, reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream salt for camera-path sampling during rendering.
pub const RENDER_STREAM: u64 = 0;
/// Stream salt for training-ray collection.
pub const TRAINING_STREAM: u64 = 0x7261_696e;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Hashes an ordered list of integers into one seed.
pub fn mix_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6a09_e667_f3bc_c908, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Generator for one (pixel, sample) pair. Distinct keys give distinct
/// ChaCha keys, so streams never overlap.
pub fn stream_rng(seed: u64, pixel: u64, sample: u64, salt: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&pixel.to_le_bytes());
    key[16..24].copy_from_slice(&sample.to_le_bytes());
    key[24..].copy_from_slice(&salt.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
