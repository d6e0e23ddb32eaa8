//! Counter-based random streams.
//!
//! Every stochastic step draws from its own ChaCha stream, addressed by
//! `(seed, replicate, sample, iteration, step)`. Adding or removing a step
//! never shifts the draws of any other step, and results do not depend on
//! how replicates are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Address of one random stream under a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StreamKey {
    pub replicate: u32,
    pub sample: u32,
    pub iteration: u16,
    pub step: u16,
}

impl StreamKey {
    pub fn sample(replicate: u32, sample: u32) -> Self {
        StreamKey {
            replicate,
            sample,
            ..Default::default()
        }
    }

    pub fn at(self, iteration: u16, step: u16) -> Self {
        StreamKey {
            iteration,
            step,
            ..self
        }
    }

    // replicate: 24 bits, sample: 16, iteration: 12, step: 12
    fn stream_id(self) -> u64 {
        (u64::from(self.replicate & 0xFF_FFFF) << 40)
            | (u64::from(self.sample) << 24)
            | (u64::from(self.iteration & 0xFFF) << 12)
            | u64::from(self.step & 0xFFF)
    }
}

pub fn stream(seed: u64, key: StreamKey) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key.stream_id());
    rng
}

/// Stream used to synthesize a sample's initial inventory.
pub const SYNTH_STEP: u16 = 0xFFF;
