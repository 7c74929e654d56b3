//! Seeded random streams.
//!
//! Every random draw in the crate goes through [`SeededRng`], a ChaCha8 stream
//! keyed by `(seed, stream id)`. Uniforms are built from the top 53 bits of a
//! `u64`, normals by the cosine branch of Box–Muller, and shuffles by a
//! descending Fisher–Yates. Nothing here depends on `rand`'s distribution code,
//! so a reimplementation with the same generator reproduces draws bit-for-bit.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub const GENERATOR_NAME: &str = "ChaCha8";
pub const GENERATOR_VERSION: &str =
    "rand_chacha 0.3.1; seed_from_u64 + set_stream; u53 uniforms; Box-Muller (cos) normals";

/// Stream ids, one per consumer, so that e.g. fold assignment never shares
/// draws with the data-generating process for the same seed.
pub mod streams {
    pub const DGP: u64 = 1;
    pub const FOLDS: u64 = 2;
    pub const BOOTSTRAP: u64 = 3;
    pub const LEARNER: u64 = 4;
    pub const PERMUTATION: u64 = 5;
}

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer on [0, n). `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
