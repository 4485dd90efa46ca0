//! Seeded randomness.
//!
//! Every random draw in the simulator comes from a named stream derived from
//! a single 64-bit seed. Streams are independent ChaCha8 keystreams that
//! share the seed but differ in the stream word, so consuming one stream
//! never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator type handed out for every stream.
pub type StreamRng = ChaCha8Rng;

/// Named sub-streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    /// Task arrivals, task attributes and DC data accrual.
    Workload,
    /// Channel randomness (per-episode rain attenuation).
    Channel,
    /// Policy sampling noise (diffusion sampler, random baselines).
    PolicyNoise,
    /// World initialisation (GD placement).
    Init,
    /// Replay-buffer minibatch sampling and training-side draws.
    Replay,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Workload => 1,
            Stream::Channel => 2,
            Stream::PolicyNoise => 3,
            Stream::Init => 4,
            Stream::Replay => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeededRng {
    seed: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh generator positioned at the start of `stream`.
    pub fn stream(&self, stream: Stream) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream.id());
        rng
    }

    /// Child seed for the `index`-th sub-run (episode, environment copy).
    pub fn derive(&self, index: u64) -> SeededRng {
        SeededRng::new(splitmix64(self.seed ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
