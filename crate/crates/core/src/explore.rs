//! Undirected exploration baselines.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianNoiseConfig {
    pub std: f64,
}

impl Default for GaussianNoiseConfig {
    fn default() -> Self {
        Self { std: 0.1 }
    }
}

/// `clip(a + eps)` with `eps ~ N(0, std^2 I)`. One normal draw is consumed per
/// component regardless of `std`.
pub fn gaussian_perturb<R: Rng + ?Sized>(
    action: &[f64],
    config: &GaussianNoiseConfig,
    low: &[f64],
    high: &[f64],
    rng: &mut R,
) -> Vec<f64> {
    action
        .iter()
        .zip(low.iter().zip(high))
        .map(|(a, (lo, hi))| {
            let eps: f64 = rng.sample(StandardNormal);
            (a + config.std * eps).clamp(*lo, *hi)
        })
        .collect()
}

/// Executes the policy action unchanged.
pub fn greedy(action: &[f64]) -> Vec<f64> {
    action.to_vec()
}

/// Target policy smoothing noise: `clip(N(0, std^2), -clip, clip)`.
pub fn smoothing_noise<R: Rng + ?Sized>(std: f64, clip: f64, rng: &mut R) -> f64 {
    let eps: f64 = rng.sample(StandardNormal);
    (std * eps).clamp(-clip, clip)
}
