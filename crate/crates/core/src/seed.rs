//! Seed derivation.
//!
//! Every stage draws its randomness from a ChaCha stream seeded by
//! `sha256(global_seed_le || label)`, so a stage can be re-run on its own
//! and still see the same stream it saw inside `run-all`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn derive_seed(global: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn labeled_rng(global: u64, label: &str) -> Rng {
    rng(derive_seed(global, label))
}
