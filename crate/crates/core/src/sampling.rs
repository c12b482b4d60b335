//! Seeded random draws shared by the searches and Monte Carlo checks.

use alloc::vec::Vec;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard complex Gaussian vector (independent real and imaginary parts).
pub fn complex_gaussian(rng: &mut SeededRng, len: usize) -> Vec<Complex64> {
    (0..len)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re, im)
        })
        .collect()
}

/// Uniformly distributed point on the unit sphere of `C^len`.
pub fn complex_unit(rng: &mut SeededRng, len: usize) -> Vec<Complex64> {
    loop {
        let v = complex_gaussian(rng, len);
        let n = libm::sqrt(v.iter().map(|z| z.norm_sqr()).sum());
        if n > 1e-12 {
            return v.into_iter().map(|z| z / n).collect();
        }
    }
}

pub fn real_gaussian(rng: &mut SeededRng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}
