//! Counter-based random streams: every consumer draws from its own ChaCha8
//! stream keyed by `(seed, purpose, index)`, so results do not depend on the
//! order in which parallel work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    InitialState = 1,
    Signal = 2,
    StateNoise = 3,
    InputNoise = 4,
    SystemParams = 5,
    ModelInit = 6,
    Batching = 7,
    Sampling = 8,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) ^ index);
    rng
}
