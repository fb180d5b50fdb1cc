//! Named random substreams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SeedRng = ChaCha8Rng;

/// Independent stream for `name` under `root`.
pub fn substream(root: u64, name: &str) -> SeedRng {
    SeedRng::seed_from_u64(derive_seed(root, name))
}

pub fn derive_seed(root: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 8 bytes"))
}
