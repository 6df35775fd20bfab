//! Named random streams derived from one run seed.
//!
//! Each stream is a ChaCha8 generator keyed by the run seed with a distinct
//! stream id, so drawing from one never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    DataGen = 1,
    Shuffle = 2,
    Perturbation = 3,
    ModelInit = 4,
    Landscape = 5,
    EvalSubset = 6,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    substream(seed, which, 0)
}

/// Stream `which` further split by `index` (e.g. one generator per tensor).
pub fn substream(seed: u64, which: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((which as u64) << 32) | index);
    rng
}
