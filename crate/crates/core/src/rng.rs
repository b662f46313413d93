//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha8 stream derived from a
//! master seed, an index (chain, dataset pair, trial, ...) and a role. Streams
//! never overlap, so results do not depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type LabRng = ChaCha8Rng;

/// Name of the Gaussian sampler, echoed into run manifests.
pub const NORMAL_ALGORITHM: &str = "rand_distr::StandardNormal (ziggurat) over ChaCha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Role {
    Init = 0,
    Batch = 1,
    Noise = 2,
    Data = 3,
    TestPool = 4,
    Resample = 5,
    Bootstrap = 6,
    Certify = 7,
}

const ROLES: u64 = 8;

pub fn substream(seed: u64, index: u64, role: Role) -> LabRng {
    let mut rng = LabRng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_mul(ROLES).wrapping_add(role as u64));
    rng
}

/// Standard normal source that counts how many variates it has produced.
#[derive(Debug, Clone)]
pub struct NormalSource {
    rng: LabRng,
    drawn: u64,
}

impl NormalSource {
    pub fn new(rng: LabRng) -> Self {
        Self { rng, drawn: 0 }
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = StandardNormal.sample(&mut self.rng);
        }
        self.drawn += out.len() as u64;
    }

    pub fn drawn(&self) -> u64 {
        self.drawn
    }
}
