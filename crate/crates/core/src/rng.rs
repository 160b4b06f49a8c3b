//! Seeded random numbers with a fixed, documented sampling algorithm.
//!
//! The bit stream is ChaCha8 (`rand_chacha`) seeded from a `u64`. Uniform
//! doubles take the top 53 bits of a `u64`. Bounded integers use rejection
//! sampling on the smallest enclosing power-of-two mask. Standard normals use
//! the Marsaglia polar method, caching the second deviate of each pair.
//! None of these depend on platform or on the version of a distribution crate,
//! so a given seed produces the same stream everywhere.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..bound`. `bound` must be nonzero.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "empty range");
        let mask = u64::MAX >> (bound - 1).leading_zeros().min(63);
        let mask = if bound == 1 { 0 } else { mask };
        loop {
            let x = self.next_u64() & mask;
            if x < bound {
                return x;
            }
        }
    }

    /// Standard normal deviate (Marsaglia polar method).
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = libm::sqrt(-2.0 * libm::log(s) / s);
                self.spare = Some(v * f);
                return u * f;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
