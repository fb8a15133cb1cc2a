//! Seedable random stream shared by every stochastic decision in a run.
//!
//! A training run owns exactly one [`RngStream`]. Consumers draw from it in a
//! fixed order so that a `(config, seed)` pair fully determines the run:
//!
//! 1. train/test split (once, before training)
//! 2. weight initialisation (once)
//! 3. per epoch: the shuffle permutation of the training set
//! 4. per mini-batch: the schedule decision (stage-3 threshold only), basic
//!    image augmentation (image mode only), then the mixing coefficient, the
//!    pairing permutation and, for CutMix, the box centre.
//!
//! The generator is ChaCha8 seeded through `seed_from_u64`, which is stable
//! across platforms and across `rand_chacha` patch releases.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Next uniform variate in `[0, 1)` with 53 bits of precision.
    pub fn uniform01(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Gamma(shape, 1) variate by Marsaglia & Tsang (2000).
    ///
    /// Shapes below one use the boost `G(a) = G(a + 1) * U^(1/a)`.
    pub fn sample_gamma(&mut self, shape: f64) -> Result<f64> {
        if shape <= 0.0 || !shape.is_finite() {
            return Err(Error::config(format!(
                "gamma shape must be positive and finite, got {shape}"
            )));
        }
        if shape < 1.0 {
            let boosted = self.sample_gamma(shape + 1.0)?;
            let u = self.uniform01();
            return Ok(boosted * u.powf(1.0 / shape));
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let (x, v) = loop {
                let x = self.standard_normal();
                let v = 1.0 + c * x;
                if v > 0.0 {
                    break (x, v * v * v);
                }
            };
            let u = self.uniform01();
            let x2 = x * x;
            if u < 1.0 - 0.0331 * x2 * x2 {
                return Ok(d * v);
            }
            if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
                return Ok(d * v);
            }
        }
    }

    /// Symmetric Beta(alpha, alpha) variate as `G1 / (G1 + G2)`.
    pub fn sample_beta(&mut self, alpha: f64) -> Result<f64> {
        if alpha <= 0.0 || !alpha.is_finite() {
            return Err(Error::config(format!(
                "beta parameter alpha must be positive and finite, got {alpha}"
            )));
        }
        loop {
            let g1 = self.sample_gamma(alpha)?;
            let g2 = self.sample_gamma(alpha)?;
            let total = g1 + g2;
            // Both draws can underflow to zero for very small alpha.
            if total > 0.0 && total.is_finite() {
                return Ok((g1 / total).clamp(0.0, 1.0));
            }
        }
    }

    /// Uniformly random permutation of `0..n` (Fisher-Yates). `n = 0` gives an
    /// empty vector.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut self.inner);
        idx
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}
