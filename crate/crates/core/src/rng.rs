//! Named, seed-derived random streams.
//!
//! Every stochastic step in the pipeline draws from a stream derived from a
//! single base seed and a label (`"pruning"`, `"noise/n00012/7"`, ...), so the
//! result of any one step does not depend on how many draws other steps made
//! or in what order workers ran.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Generator used throughout the crate.
pub type StreamRng = ChaCha8Rng;

/// Derives a child seed from `base` and a textual label.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Creates the generator for the named sub-stream of `base`.
pub fn stream(base: u64, label: &str) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(base, label))
}
