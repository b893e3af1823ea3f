//! Seeded random streams.
//!
//! Every consumer draws from its own ChaCha8 stream derived from the global
//! seed, so adding draws in one consumer never perturbs another. Stream ids
//! are `(kind << 32) | index`, where `index` separates e.g. sequences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Parameter initialization.
    Init = 1,
    /// Scene, noise and feature synthesis.
    Synth = 2,
    /// Mini-batch sampling during training.
    Batch = 3,
    /// Held-out sampling used by evaluation helpers.
    Eval = 4,
}

pub fn stream(seed: u64, kind: Stream) -> Rng {
    substream(seed, kind, 0)
}

pub fn substream(seed: u64, kind: Stream, index: u32) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((kind as u64) << 32) | index as u64);
    rng
}
