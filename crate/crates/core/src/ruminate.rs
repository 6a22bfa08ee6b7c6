//! Restores pseudo-historical windows from the latest model and estimates a
//! target latent for each new window by self-normalized importance sampling
//! under the prior.
//!
//! For prior draws `z_1..z_N ~ N(0, I)` the unnormalized log-weight of `z_s` is
//!
//! ```text
//! log a_s = log p(x_new | z_s) + sum_h log p(x_hist_h | z_s)
//! ```
//!
//! with both likelihoods taken from the decoder. Weights are normalized with
//! log-sum-exp, the mean is `sum_s w_s z_s` and the per-coordinate variance is
//! `sum_s w_s z_s^2 - mean^2`, floored at zero.

use crate::error::{Error, Result};
use crate::numerics::{gaussian_diag_logpdf, log_sum_exp, sample_gaussian_diag, Rng, Vec64};
use crate::vae::GaussianVae;

#[derive(Debug, Clone, PartialEq)]
pub struct RuminateConfig {
    /// Restored historical windows per new window.
    pub n_restored: usize,
    /// Prior draws used by the importance-sampling estimate.
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for RuminateConfig {
    fn default() -> Self {
        Self {
            n_restored: 3,
            n_samples: 10,
            seed: 0,
        }
    }
}

impl RuminateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_restored == 0 || self.n_samples == 0 {
            return Err(Error::invalid(format!(
                "ruminate needs n >= 1 and N >= 1 (got n = {}, N = {})",
                self.n_restored, self.n_samples
            )));
        }
        Ok(())
    }
}

/// Importance-sampling estimate of the target latent for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct RuminateEstimate {
    pub mean: Vec64,
    pub var: Vec64,
    /// Normalized weights, one per prior draw.
    pub weights: Vec64,
    /// Shannon entropy of `weights` in nats.
    pub weight_entropy: f64,
    /// The prior draws the weights refer to.
    pub samples: Vec<Vec64>,
}

/// Draws `n` windows from `p(x | z*)` where `z*` is the posterior mean of `x_new`.
pub fn restore_historical<V: GaussianVae + ?Sized>(
    model: &V,
    x_new: &[f64],
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec64>> {
    if n == 0 {
        return Err(Error::invalid("at least one historical window must be restored"));
    }
    let z = model.encode(x_new)?.mean;
    let px = model.decode(&z)?;
    Ok((0..n).map(|_| sample_gaussian_diag(&px, rng)).collect())
}

pub fn ruminate_estimate<V: GaussianVae + ?Sized>(
    model: &V,
    x_new: &[f64],
    restored: &[Vec64],
    cfg: &RuminateConfig,
    rng: &mut Rng,
) -> Result<RuminateEstimate> {
    cfg.validate()?;
    if restored.is_empty() {
        return Err(Error::invalid("restored historical set is empty"));
    }
    let m = model.latent_dim();
    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut log_w = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        let z = rng.normal_vec(m);
        let px = model.decode(&z)?;
        let mut lw = gaussian_diag_logpdf(x_new, &px)?;
        for h in restored {
            lw += gaussian_diag_logpdf(h, &px)?;
        }
        samples.push(z);
        log_w.push(lw);
    }
    weighted_moments(samples, &log_w)
}

/// Self-normalized moments of `samples` under unnormalized log-weights.
///
/// NaN log-weights count as zero weight. Fails when no weight is positive.
pub fn weighted_moments(samples: Vec<Vec64>, log_weights: &[f64]) -> Result<RuminateEstimate> {
    if samples.is_empty() || samples.len() != log_weights.len() {
        return Err(Error::shape(format!(
            "{} samples with {} log-weights",
            samples.len(),
            log_weights.len()
        )));
    }
    let cleaned: Vec64 = log_weights
        .iter()
        .map(|&v| if v.is_nan() { f64::NEG_INFINITY } else { v })
        .collect();
    let norm = log_sum_exp(&cleaned);
    if !norm.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let weights: Vec64 = cleaned.iter().map(|v| (v - norm).exp()).collect();

    let m = samples[0].len();
    let mut mean = vec![0.0; m];
    let mut second = vec![0.0; m];
    for (z, &w) in samples.iter().zip(&weights) {
        if z.len() != m {
            return Err(Error::shape("latent samples differ in length"));
        }
        for j in 0..m {
            mean[j] += w * z[j];
            second[j] += w * z[j] * z[j];
        }
    }
    let var = second.iter().zip(&mean).map(|(s, mu)| (s - mu * mu).max(0.0)).collect();
    let weight_entropy = -weights.iter().filter(|&&w| w > 0.0).map(|w| w * w.ln()).sum::<f64>();
    Ok(RuminateEstimate {
        mean,
        var,
        weights,
        weight_entropy,
        samples,
    })
}
