//! Deterministic random streams keyed by `(seed, label)`.
//!
//! Every sample site draws from its own stream, so inserting or renaming
//! auxiliary sites never shifts the draws of unrelated sites.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// A stream for `label` under `seed`. Element `i` of a vector site is the
/// `i`-th draw of that stream.
pub fn keyed_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// A stream for chain `index` of a run seeded by `seed`.
pub fn chain_rng(seed: u64, index: usize) -> ChaCha8Rng {
    keyed_rng(seed, &format!("chain/{index}"))
}
