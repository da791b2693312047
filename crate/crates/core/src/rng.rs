//! Master-seed fan-out into independent named random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Consumers of randomness. Each gets its own ChaCha stream so that changing
/// how much one consumer draws leaves the others untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Dropout = 2,
    Data = 3,
    Sampling = 4,
    ShiftNoise = 5,
    Source = 6,
    Augment = 7,
}

pub fn stream(master_seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(which as u64);
    rng
}
