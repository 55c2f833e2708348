//! Seeded substreams.
//!
//! Every random stream is a ChaCha8 generator keyed by the user seed, with the
//! stream id selecting an independent counter space. Runs that differ only in
//! stream id never share randomness, which keeps parallel cells reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purposes a run draws randomness for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    OracleNoise = 1,
    Probes = 2,
}

pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for `(epsilon index, purpose)` within a seed.
pub fn stream_id(epsilon_index: usize, purpose: Purpose) -> u64 {
    ((epsilon_index as u64) << 8) | purpose as u64
}
