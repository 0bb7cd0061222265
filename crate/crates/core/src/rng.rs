//! Seeded random streams.
//!
//! All randomness in training and sampling comes from [`SeededRng`], a
//! ChaCha8 generator whose full state is `(seed, stream, word position)`.
//! That triple is what a checkpoint stores to resume bit-identically.
//! Normal variates use the Box–Muller transform so their values depend only
//! on the uniform stream and libm's `ln`/`sqrt`/`cos`/`sin`.

use rand_chacha::ChaCha8Rng;
use rand_core::{Rng, SeedableRng};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// An independent stream derived from the same seed, e.g. one per utterance.
    pub fn fork(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Self {
            seed: self.seed,
            inner,
        }
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(state.seed);
        inner.set_stream(state.stream);
        inner.set_word_pos(state.word_pos);
        Self {
            seed: state.seed,
            inner,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift with rejection).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    /// Fills `out` with i.i.d. standard normal draws. Each pair of outputs
    /// consumes two uniforms; an odd tail discards the second variate.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for pair in out.chunks_mut(2) {
            // 1 - u lies in (0, 1], so ln never sees zero
            let u1 = 1.0 - self.uniform();
            let u2 = self.uniform();
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = std::f64::consts::TAU * u2;
            pair[0] = r * theta.cos();
            if let Some(second) = pair.get_mut(1) {
                *second = r * theta.sin();
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        let mut v = [0.0];
        self.fill_normal(&mut v);
        v[0]
    }
}

/// A tensor of i.i.d. standard normal entries.
pub fn gaussian(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    rng.fill_normal(t.data_mut());
    t
}
