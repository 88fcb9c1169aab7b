//! Fixtures shared by the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajsim_core::measures::Pt;

/// A random walk of `len` points with 100 m steps.
pub fn walk(len: usize, seed: u64) -> Vec<Pt> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = [0.0, 0.0];
    (0..len)
        .map(|_| {
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            p = [p[0] + 100.0 * a.cos(), p[1] + 100.0 * a.sin()];
            p
        })
        .collect()
}
