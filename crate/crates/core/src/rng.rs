//! Seed management.
//!
//! Every trial has one root seed. Each source of randomness draws from its own
//! ChaCha stream keyed by that seed, so schemes compared under the same seed
//! see identical fading, noise and data order wherever their decisions agree.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Fading,
    Noise,
    Shuffle,
    Split,
    Training,
    Subset,
    /// Local training on device `k`.
    Device(usize),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Fading => 1,
            Stream::Noise => 2,
            Stream::Shuffle => 3,
            Stream::Split => 4,
            Stream::Training => 5,
            Stream::Subset => 6,
            Stream::Device(k) => 1024 + k as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    root: u64,
}

impl SeedStreams {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn rng(&self, stream: Stream) -> SimRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        rng.set_stream(stream.id());
        rng
    }
}
