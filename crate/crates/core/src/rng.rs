//! Independent deterministic random streams.
//!
//! Every stochastic component of a training run draws from its own stream so
//! that switching one component on or off never shifts the random sequence
//! seen by another.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    /// Actor, critic and value network initialization.
    Init,
    /// Explorer network initialization.
    ExplorerInit,
    /// Training environment start states.
    Env,
    /// Uniform random actions during warmup.
    Warmup,
    /// Behavioral action noise (Gaussian exploration, stochastic policies).
    PolicyNoise,
    /// Target policy smoothing noise.
    Smoothing,
    /// Replay buffer sampling.
    Buffer,
}

impl Stream {
    pub const ALL: [Stream; 7] = [
        Stream::Init,
        Stream::ExplorerInit,
        Stream::Env,
        Stream::Warmup,
        Stream::PolicyNoise,
        Stream::Smoothing,
        Stream::Buffer,
    ];

    fn id(self) -> u64 {
        self as u64 + 1
    }
}

/// Derives the 64-bit seed of `stream` from a run's master seed.
pub fn stream_seed(master: u64, stream: Stream) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream.id());
    rng.next_u64()
}

pub fn stream_rng(master: u64, stream: Stream) -> StreamRng {
    StreamRng::seed_from_u64(stream_seed(master, stream))
}

pub fn seeded_rng(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}
