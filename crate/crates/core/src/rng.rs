//! Seed derivation.
//!
//! Every random quantity in a run comes from a ChaCha8 stream keyed by a seed
//! derived from `(base seed, purpose tag, index)`. Streams never depend on
//! thread scheduling, so parallel runs stay bit-reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for derived streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Mobility = 1,
    Channel = 2,
    Policy = 3,
    Init = 4,
    TrainEpisode = 5,
    EvalEpisode = 6,
    MonteCarlo = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ (stream as u64).rotate_left(32)) ^ splitmix64(index))
}

pub fn stream_rng(base: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream, index))
}
