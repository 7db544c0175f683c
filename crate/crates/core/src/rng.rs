//! Seeded random streams. Every consumer draws from its own ChaCha stream
//! derived from the experiment seed, so adding draws in one place never
//! shifts the numbers seen by another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// Named substreams of one experiment seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    BaseSampling = 1,
    DataNoise = 2,
    MaskOrder = 3,
    FlowInit = 4,
    SurrogateInit = 5,
    Calibration = 6,
    Annealing = 7,
    Output = 8,
}

#[derive(Clone, Copy, Debug)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, s: Stream) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(s as u64);
        rng
    }
}

pub fn standard_normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}
