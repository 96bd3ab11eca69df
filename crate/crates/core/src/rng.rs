//! Reproducible random streams.
//!
//! Every replicate draws from its own ChaCha8 stream, keyed by the master
//! seed and selected by the replicate index. ChaCha is counter based, so
//! streams are independent of evaluation order and thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

pub fn replicate_stream(master_seed: u64, replicate: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate);
    rng
}

/// A stream for one-off use, e.g. a single simulation.
pub fn stream(seed: u64) -> Stream {
    replicate_stream(seed, 0)
}
