//! Adaptive threshold adjustment: per-layer threshold growth triggered by
//! noisy spikes.
//!
//! A noisy spike is one emitted by an SNN neuron whose weight-shared ANN
//! counterpart is inactive (ReLU output exactly zero).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::SpikeCounts;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AtaConfig {
    pub enabled: bool,
    /// Scale of the growth step.
    pub tau: f32,
    /// Momentum; the growth step is damped by `1 - alpha`.
    pub alpha: f32,
    /// Mean noisy-spike count at or below which thresholds stay put.
    pub epsilon: f32,
}

impl Default for AtaConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            tau: 0.1,
            alpha: 0.1,
            epsilon: 0.01,
        }
    }
}

impl AtaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("ata.tau must be > 0, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "ata.alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "ata.epsilon must be in [0, 1], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Multiplier applied to a threshold when noise exceeds the tolerance.
    pub fn growth_factor(&self) -> f32 {
        1.0 + self.tau * (1.0 - self.alpha)
    }
}

/// Noisy-spike statistics for one layer and one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseMass {
    /// Number of noisy positions.
    pub positions: usize,
    /// Spikes emitted at noisy positions.
    pub spikes: u64,
    /// `spikes / positions`, or 0 when there are none.
    pub mean: f64,
}

/// Collects positions where `counts > 0` and `relu_out == 0`.
pub fn noisy_spike_mass(counts: &SpikeCounts, relu_out: &Tensor) -> Result<NoiseMass> {
    if counts.shape() != relu_out.shape() {
        return Err(Error::shape(
            "noisy_spike_mass",
            format!("counts {:?} vs relu {:?}", counts.shape(), relu_out.shape()),
        ));
    }
    let mut positions = 0usize;
    let mut spikes = 0u64;
    for (&c, &r) in counts.counts().iter().zip(relu_out.data()) {
        if c > 0 && r <= 0.0 {
            positions += 1;
            spikes += c as u64;
        }
    }
    let mean = if positions == 0 {
        0.0
    } else {
        spikes as f64 / positions as f64
    };
    Ok(NoiseMass {
        positions,
        spikes,
        mean,
    })
}

/// Returns the next threshold: unchanged when `mean_noise <= epsilon`,
/// otherwise grown by `1 + tau * (1 - alpha)`.
pub fn ata_update(v_th: f32, mean_noise: f64, cfg: &AtaConfig) -> f32 {
    // max(0, Sign(x)) is 1 only for strictly positive x
    if mean_noise > cfg.epsilon as f64 {
        v_th * cfg.growth_factor()
    } else {
        v_th
    }
}
