//! Seeded random streams. Trajectory `i` of a run with master seed `s` always
//! draws from stream `i` of the ChaCha8 generator keyed by `s`, so ensembles
//! are reproducible irrespective of evaluation order.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub use rand_chacha::ChaCha8Rng as StreamRng;

/// Streams at or above this index are reserved for non-trajectory uses.
pub const RESERVED_STREAMS: u64 = 1 << 62;

pub fn stream(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Stream for auxiliary randomness (optimizer restarts and the like).
pub fn auxiliary_stream(master_seed: u64, index: u64) -> ChaCha8Rng {
    stream(master_seed, RESERVED_STREAMS + index)
}

/// Uniform draw from `(0, 1]`.
pub fn uniform_open_closed<R: RngCore>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw from `[0, 1)`.
pub fn uniform<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
