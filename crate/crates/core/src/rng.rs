//! Seeded random streams.
//!
//! All randomness comes from ChaCha20 (a counter-based stream cipher
//! generator) keyed by the experiment seed; independent consumers draw from
//! distinct stream ids so adding draws in one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha20Rng;

pub mod stream {
    pub const PROCESS_NOISE: u64 = 1;
    pub const MEASUREMENT_NOISE: u64 = 2;
    pub const ENKF: u64 = 3;
    pub const LUENBERGER_DESIGN: u64 = 4;
    pub const INITIAL_STATE: u64 = 5;
}

pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
