//! Bounded measurement noise: every draw has `||n||_2` equal to the level
//! exactly (uniform direction), matching a deterministic norm bound rather
//! than a noise distribution with that expected norm.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels;
use crate::seeding;

#[derive(Clone, Copy, Debug)]
pub struct NoiseModel {
    pub eta: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(eta: f64, seed: u64) -> Result<Self> {
        if eta < 0.0 || !eta.is_finite() {
            return Err(Error::invalid(format!("noise level must be >= 0, got {eta}")));
        }
        Ok(NoiseModel { eta, seed })
    }

    /// Draw the noise vector for a tagged sample (tags keep draws
    /// independent of iteration order).
    pub fn sample(&self, dim: usize, tag: u64) -> Vec<f64> {
        if self.eta == 0.0 {
            return vec![0.0; dim];
        }
        let mut rng = seeding::rng(self.seed, tag);
        loop {
            let dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = kernels::norm2(&dir);
            if norm > 0.0 {
                return kernels::scale(&dir, self.eta / norm);
            }
        }
    }
}
