//! Seeded random streams.
//!
//! Every randomized stage draws from ChaCha8 (`rand_chacha::ChaCha8Rng`), a
//! counter-based generator whose output is identical on every platform.
//! Streams are split by name: `stream(seed, "balance/major")` and
//! `stream(seed, "split/major")` never overlap, so adding a new consumer
//! cannot shift the draws of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Name of the generator, recorded in docs and run logs.
pub const ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9), named 64-bit streams";

/// Independent generator for `(seed, label)`.
pub fn stream(seed: u64, label: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label_id(label));
    rng
}

fn label_id(label: &str) -> u64 {
    let digest = Sha256::digest(label.as_bytes());
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}
