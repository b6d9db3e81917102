use serde::{Deserialize, Serialize};

use super::GradPair;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl AdamMoments {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update of `param` from its accumulated gradient.
///
/// `t` is the 1-based step count. The gradient is checked for finiteness
/// before anything is written.
pub fn adam_step(param: &mut GradPair, moments: &mut AdamMoments, cfg: &AdamConfig, lr: f32, t: u64) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidArgument("Adam step count starts at 1".into()));
    }
    if moments.m.len() != param.value.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "moments for {} values, parameter has {}",
                moments.m.len(),
                param.value.len()
            ),
        ));
    }
    if !param.grad.is_finite() {
        return Err(Error::NonFinite(format!(
            "gradient of parameter {:?}",
            param.value.shape()
        )));
    }
    let bc1 = 1.0 - (cfg.beta1 as f64).powi(t as i32);
    let bc2 = 1.0 - (cfg.beta2 as f64).powi(t as i32);
    let values = param.value.data_mut();
    for (i, &g) in param.grad.data().iter().enumerate() {
        let m = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * g * g;
        moments.m[i] = m;
        moments.v[i] = v;
        let m_hat = m as f64 / bc1;
        let v_hat = v as f64 / bc2;
        values[i] -= (lr as f64 * m_hat / (v_hat.sqrt() + cfg.eps as f64)) as f32;
    }
    Ok(())
}

/// Adam over an ordered parameter list; moments are keyed by position.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<AdamMoments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr` to every parameter.
    pub fn step(&mut self, params: &mut [&mut GradPair], lr: f32) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = params.iter().map(|p| AdamMoments::new(p.value.len())).collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} parameters, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        // validate everything first so a bad gradient leaves all parameters untouched
        for p in params.iter() {
            if !p.grad.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {:?}", p.value.shape())));
            }
        }
        self.step += 1;
        for (p, m) in params.iter_mut().zip(&mut self.moments) {
            adam_step(p, m, &self.config, lr, self.step)?;
        }
        Ok(())
    }
}
