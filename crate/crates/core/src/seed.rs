//! Seed derivation.
//!
//! Every random stream in a run is derived from the root seed and a
//! `(stage, index)` pair: the first eight bytes (little endian) of
//! `SHA-256("{root}/{stage}/{index}")`. Streams never touch ambient entropy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn derive_seed(root: u64, stage: &str, index: u64) -> u64 {
    let digest = Sha256::digest(format!("{root}/{stage}/{index}").as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(root: u64, stage: &str, index: u64) -> Rng {
    rng_from_seed(derive_seed(root, stage, index))
}
