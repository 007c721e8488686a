//! Counter-based random streams.
//!
//! Every replication gets its own ChaCha stream keyed by the master seed and
//! selected by the replication index, so results do not depend on how work is
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Stream family identifiers, so that different consumers of the same master
/// seed never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Replication = 1,
    Family = 2,
    BurnIn = 3,
    Calibration = 4,
    Synthetic = 5,
}

/// Random stream for `(master seed, purpose, index)`.
pub fn stream(master_seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"occfluct-stream-v1");
    hasher.update(master_seed.to_le_bytes());
    hasher.update((purpose as u64).to_le_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Shorthand for the per-replication stream.
pub fn replication_stream(master_seed: u64, index: u64) -> ChaCha8Rng {
    stream(master_seed, Purpose::Replication, index)
}
