use std::sync::Arc;

use rand_distr::{Distribution, Normal};

use super::Imputer;
use crate::data::RowRef;
use crate::error::{Error, Result};
use crate::seed;

/// Noise standard deviation used by the predictor-quality experiments.
pub const DEFAULT_NOISE_SD: f64 = 2.0;

/// `(1 − q)·oracle(x) + q·ε` with `ε ~ N(0, noise_sd²)` drawn per row and
/// target from `(seed, row id, target index)`.
#[derive(Debug, Clone)]
pub struct NoisyMixture {
    oracle: Arc<dyn Imputer>,
    q: f64,
    noise: Normal<f64>,
    seed: u64,
}

pub fn noisy_mixture_predictor(oracle: Arc<dyn Imputer>, q: f64, noise_sd: f64, seed: u64) -> Result<NoisyMixture> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidQ(q));
    }
    let noise = Normal::new(0.0, noise_sd)
        .map_err(|_| Error::InvalidConfig(format!("noise sd must be finite and non-negative, got {noise_sd}")))?;
    Ok(NoisyMixture { oracle, q, noise, seed })
}

impl Imputer for NoisyMixture {
    fn targets(&self) -> &[usize] {
        self.oracle.targets()
    }

    fn predict(&self, row: RowRef<'_>) -> Result<Vec<f64>> {
        let mut out = self.oracle.predict(row)?;
        if self.q == 0.0 {
            return Ok(out);
        }
        for (j, o) in out.iter_mut().enumerate() {
            let eps = self.noise.sample(&mut seed::rng(self.seed, &[row.id, j as u64]));
            *o = (1.0 - self.q) * *o + self.q * eps;
        }
        Ok(out)
    }
}
