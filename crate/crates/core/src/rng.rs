//! Named random substreams derived from a single root seed.
//!
//! Every stochastic component takes a `ChaCha8Rng` built from
//! `(root seed, label path)`, so adding a consumer in one stage never shifts
//! the random draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derive a 64-bit seed for the substream `label` under `seed`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 has 32 bytes"))
}

/// Generator for the substream `label` under `seed`.
pub fn substream(seed: u64, label: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, label))
}

/// Generator for an indexed child of a named substream, e.g. one per clip.
pub fn indexed(seed: u64, label: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(derive_seed(seed, label), &index.to_string()))
}
