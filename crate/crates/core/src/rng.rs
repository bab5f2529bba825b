//! Named, independent random streams derived from one experiment seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const SELECTION_INIT: &str = "selection-init";
pub const SAMPLING: &str = "sampling";
pub const GENERATOR: &str = "generator";
pub const POLICY_INIT: &str = "policy-init";
pub const BATCHING: &str = "batching";
pub const RANDOM_SUBSET: &str = "random-subset";

/// ChaCha stream `name` under `seed`. Distinct names never share output, so
/// one component can draw more or fewer numbers without disturbing another.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(name.as_bytes());
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from_le_bytes(word));
    rng
}
