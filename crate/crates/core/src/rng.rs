//! Seeded random streams.
//!
//! Every observation gets its own stream per iteration, so results do not
//! depend on how observations are spread over threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Stream for observation `i` at MCEM iteration `iteration`.
pub fn observation_rng(seed: u64, iteration: u64, i: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((iteration << 40) | i);
    rng
}

/// Generator for a named sub-task (initialization fits and the like).
pub fn task_rng(seed: u64, task: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - task);
    rng
}

/// Fill `out` with independent standard normal draws.
#[inline]
pub fn fill_normal<R: Rng>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}
