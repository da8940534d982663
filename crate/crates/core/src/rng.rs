//! Keyed random streams.
//!
//! Every random quantity in a simulation is drawn from a ChaCha stream whose
//! 256-bit key is `(seed, purpose, index, replication)`. Draws therefore do
//! not depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for; part of the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    ClusterSize = 1,
    Covariance = 2,
    Regressors = 3,
    RegressorScale = 4,
    Errors = 5,
    Coefficients = 6,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64, replication: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..32].copy_from_slice(&replication.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
