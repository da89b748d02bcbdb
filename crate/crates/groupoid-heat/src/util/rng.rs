//! Deterministic random streams.
//!
//! Every randomized computation draws from a ChaCha stream derived from the
//! run seed plus a task label, so adding or reordering tasks never perturbs
//! the draws of unrelated tasks and whole runs replay bit for bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Default run seed: the ASCII bytes of the word BOUNDARY.
pub const DEFAULT_SEED: u64 = 0x424F_554E_4441_5259;

/// Random stream for a named task under the given run seed.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(label.as_bytes());
    let mut tag = [0u8; 8];
    tag.copy_from_slice(&digest[..8]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from_le_bytes(tag));
    rng
}
