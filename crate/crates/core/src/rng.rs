//! Deterministic random streams.
//!
//! Every stochastic choice in a run is drawn from a ChaCha stream whose key
//! is derived from the run seed plus a tuple of context words (round, client
//! id, purpose tag). Results therefore never depend on how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Purpose tags keep streams for different uses disjoint.
pub mod tag {
    pub const INIT: u64 = 0x1;
    pub const SAMPLE_CLIENTS: u64 = 0x2;
    pub const CLIENT_EPOCH: u64 = 0x3;
    pub const PARTITION: u64 = 0x4;
    pub const PAIRING: u64 = 0x5;
    pub const CORPUS: u64 = 0x6;
    pub const CLIENT_SEED: u64 = 0x7;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds context words into a 64-bit key.
pub fn derive(seed: u64, words: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for &w in words {
        h = splitmix64(h ^ splitmix64(w));
    }
    h
}

pub fn stream(seed: u64, words: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive(seed, words))
}
