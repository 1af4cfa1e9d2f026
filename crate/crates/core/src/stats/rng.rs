//! Seed derivation. Every randomized procedure takes an explicit seed; child
//! streams are derived by hashing so results do not depend on thread count.

use rand::SeedableRng;
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};
use sha2::{Digest, Sha256};

/// SHA-256 over `label ‖ seed (LE) ‖ index (LE)`.
pub fn derive_seed(label: &[u8], seed: u64, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(label);
    h.update(seed.to_le_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

/// Stream for resample `i` of a bootstrap run seeded with `seed`.
pub fn resample_rng(seed: u64, i: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(b"", seed, i))
}

pub fn labelled_rng(label: &str, seed: u64, index: u64) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(derive_seed(label.as_bytes(), seed, index))
}
