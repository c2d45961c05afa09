//! Seeded random streams.
//!
//! Every experiment repeat draws from its own ChaCha8 stream keyed by
//! `(master_seed, stream)`, so results do not depend on how repeats are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ExperimentRng = ChaCha8Rng;

/// Seed used when a run does not specify one.
pub const DEFAULT_SEED: u64 = 0;

/// Independent generator for stream `stream` under `master_seed`.
pub fn stream_rng(master_seed: u64, stream: u64) -> ExperimentRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}
