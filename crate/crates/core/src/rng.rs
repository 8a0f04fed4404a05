//! Seed discipline.
//!
//! A master seed fans out into independent ChaCha8 streams, one per purpose,
//! addressed by `(stream tag, index)`. The stream word is `tag << 48 | index`,
//! so every (purpose, index) pair maps to a distinct keystream of the same key
//! and runs that differ only in method still see identical realizations.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Weights = 1,
    Exploration = 2,
    Environment = 3,
    Filter = 4,
    Replay = 5,
    Evaluation = 6,
    Lookahead = 7,
    TrainingSeeds = 8,
    Sweep = 9,
}

const INDEX_MASK: u64 = (1 << 48) - 1;

pub fn substream(master: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((stream as u64) << 48) | (index & INDEX_MASK));
    rng
}

/// A derived integer seed, for APIs that take a plain `u64` seed.
pub fn derive_seed(master: u64, stream: Stream, index: u64) -> u64 {
    substream(master, stream, index).next_u64()
}
