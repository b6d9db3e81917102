//! Batch-norm statistics tracked by exponential moving average, and folding of
//! the normalization into per-step weights and biases for the spiking branch.
//!
//! The ANN branch applies `gamma * (z - mu) / sqrt(sigma^2 + eps) + beta` with
//! the EMA statistics. The spiking branch instead integrates
//! `W_s x_t + b_s` for `t = 1..T`, where the bias is spread evenly over the
//! window so that the T per-step affine maps sum to the ANN-branch
//! normalization of the time-summed input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{GradPair, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BnConfig {
    /// EMA weight given to the newest batch statistic.
    pub momentum: f32,
    pub eps: f32,
}

impl Default for BnConfig {
    fn default() -> Self {
        Self {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

impl BnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "bn.momentum must be in [0, 1], got {}",
                self.momentum
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("bn.eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Per-channel normalization parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState {
    pub gamma: GradPair,
    pub beta: GradPair,
    pub mu_ema: Vec<f32>,
    /// Running standard deviation (not variance).
    pub sigma_ema: Vec<f32>,
    pub momentum: f32,
    pub eps: f32,
}

impl BnState {
    pub fn new(channels: usize, cfg: &BnConfig) -> Self {
        Self {
            gamma: GradPair::new(Tensor::full(&[channels], 1.0)),
            beta: GradPair::new(Tensor::zeros(&[channels])),
            mu_ema: vec![0.0; channels],
            sigma_ema: vec![1.0; channels],
            momentum: cfg.momentum,
            eps: cfg.eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.mu_ema.len()
    }

    /// `sqrt(sigma_ema^2 + eps)` per channel.
    pub fn scale(&self) -> Vec<f32> {
        self.sigma_ema
            .iter()
            .map(|&s| {
                let d = s * s + self.eps;
                assert!(d > 0.0, "sigma^2 + eps must stay positive");
                d.sqrt()
            })
            .collect()
    }
}

fn channel_layout(op: &'static str, shape: &[usize], channels: usize) -> Result<(usize, usize)> {
    // [N, C, ...] -> (N, spatial)
    if shape.len() < 2 || shape[1] != channels {
        return Err(Error::shape(
            op,
            format!("expected [N, {channels}, ...], got {shape:?}"),
        ));
    }
    Ok((shape[0], shape[2..].iter().product()))
}

/// Folds the normalization into `(W_s, b_s)`:
/// `W_s = gamma W / s`, `b_s = gamma (b - mu) / (T s) + beta / T`,
/// with `s = sqrt(sigma^2 + eps)` and the first weight axis as channel.
pub fn fold_weights(weight: &Tensor, bias: &Tensor, bn: &BnState, t: usize) -> Result<(Tensor, Tensor)> {
    if t == 0 {
        return Err(Error::InvalidArgument("time window must have at least one step".into()));
    }
    let c = bn.channels();
    if weight.shape().first() != Some(&c) || bias.shape() != [c] {
        return Err(Error::shape(
            "fold_weights",
            format!("weight {:?} / bias {:?} for {c} channels", weight.shape(), bias.shape()),
        ));
    }
    let scale = bn.scale();
    let per_channel = weight.len() / c.max(1);
    let gamma = bn.gamma.value.data();
    let beta = bn.beta.value.data();
    let tf = t as f32;
    let mut ws = weight.clone();
    for (ch, chunk) in ws.data_mut().chunks_mut(per_channel.max(1)).enumerate().take(c) {
        let k = gamma[ch] / scale[ch];
        chunk.iter_mut().for_each(|w| *w *= k);
    }
    let bs: Vec<f32> = (0..c)
        .map(|ch| gamma[ch] * (bias.data()[ch] - bn.mu_ema[ch]) / (tf * scale[ch]) + beta[ch] / tf)
        .collect();
    Ok((ws, Tensor::new(vec![c], bs)?))
}

/// Gradients flowing back through [`fold_weights`], statistics held constant.
#[derive(Debug, Clone)]
pub struct FoldGrads {
    pub weight: Tensor,
    pub bias: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

pub fn fold_backward(
    grad_ws: &Tensor,
    grad_bs: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    bn: &BnState,
    t: usize,
) -> Result<FoldGrads> {
    grad_ws.expect_same_shape(weight, "fold_backward")?;
    grad_bs.expect_same_shape(bias, "fold_backward")?;
    let c = bn.channels();
    let scale = bn.scale();
    let per_channel = weight.len() / c.max(1);
    let gamma = bn.gamma.value.data();
    let tf = t as f32;
    let mut gw = Vec::with_capacity(weight.len());
    let mut gg = vec![0.0f32; c];
    for ch in 0..c {
        let k = gamma[ch] / scale[ch];
        let w = &weight.data()[ch * per_channel..][..per_channel];
        let g = &grad_ws.data()[ch * per_channel..][..per_channel];
        let mut dot = 0.0f32;
        for (&gi, &wi) in g.iter().zip(w) {
            gw.push(gi * k);
            dot += gi * wi;
        }
        gg[ch] = dot / scale[ch] + grad_bs.data()[ch] * (bias.data()[ch] - bn.mu_ema[ch]) / (tf * scale[ch]);
    }
    let gb: Vec<f32> = (0..c)
        .map(|ch| grad_bs.data()[ch] * gamma[ch] / (tf * scale[ch]))
        .collect();
    let gbeta: Vec<f32> = grad_bs.data().iter().map(|&g| g / tf).collect();
    Ok(FoldGrads {
        weight: Tensor::new(weight.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![c], gb)?,
        gamma: Tensor::new(vec![c], gg)?,
        beta: Tensor::new(vec![c], gbeta)?,
    })
}

/// Per-channel mean and (population) standard deviation of `[N, C, ...]`.
pub fn batch_stats(z: &Tensor, channels: usize) -> Result<(Vec<f32>, Vec<f32>)> {
    let (n, spatial) = channel_layout("batch_stats", z.shape(), channels)?;
    let count = (n * spatial) as f64;
    if count == 0.0 {
        return Err(Error::InvalidArgument("batch statistics of an empty batch".into()));
    }
    let mut sum = vec![0.0f64; channels];
    let mut sq = vec![0.0f64; channels];
    for sample in z.data().chunks(channels * spatial) {
        for (ch, plane) in sample.chunks(spatial).enumerate() {
            for &v in plane {
                sum[ch] += v as f64;
                sq[ch] += v as f64 * v as f64;
            }
        }
    }
    let mu: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let sigma = sq
        .iter()
        .zip(&mu)
        .map(|(s, m)| ((s / count - m * m).max(0.0)).sqrt() as f32)
        .collect();
    Ok((mu.into_iter().map(|m| m as f32).collect(), sigma))
}

/// `stat <- (1 - momentum) * stat + momentum * batch_stat` for mean and std.
pub fn update_ema(bn: &mut BnState, batch_mu: &[f32], batch_sigma: &[f32]) -> Result<()> {
    if batch_mu.len() != bn.channels() || batch_sigma.len() != bn.channels() {
        return Err(Error::shape("update_ema", format!("{} channels", bn.channels())));
    }
    if batch_mu.iter().chain(batch_sigma).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("batch statistics".into()));
    }
    let a = bn.momentum;
    for (m, &b) in bn.mu_ema.iter_mut().zip(batch_mu) {
        *m = (1.0 - a) * *m + a * b;
    }
    for (s, &b) in bn.sigma_ema.iter_mut().zip(batch_sigma) {
        *s = (1.0 - a) * *s + a * b;
    }
    Ok(())
}

/// ANN-branch normalization of a `[N, C, ...]` pre-activation with the
/// running statistics.
pub fn bn_forward(z: &Tensor, bn: &BnState) -> Result<Tensor> {
    let c = bn.channels();
    let (_, spatial) = channel_layout("bn_forward", z.shape(), c)?;
    let scale = bn.scale();
    let gamma = bn.gamma.value.data();
    let beta = bn.beta.value.data();
    let mut data = z.data().to_vec();
    for sample in data.chunks_mut(c * spatial) {
        for (ch, plane) in sample.chunks_mut(spatial).enumerate() {
            let (g, m, s, b) = (gamma[ch], bn.mu_ema[ch], scale[ch], beta[ch]);
            plane.iter_mut().for_each(|v| *v = g * (*v - m) / s + b);
        }
    }
    Tensor::new(z.shape().to_vec(), data)
}

#[derive(Debug, Clone)]
pub struct BnGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// Adjoint of [`bn_forward`]; the running statistics are constants.
pub fn bn_backward(grad_out: &Tensor, z: &Tensor, bn: &BnState) -> Result<BnGrads> {
    grad_out.expect_same_shape(z, "bn_backward")?;
    let c = bn.channels();
    let (_, spatial) = channel_layout("bn_backward", z.shape(), c)?;
    let scale = bn.scale();
    let gamma = bn.gamma.value.data();
    let mut gg = vec![0.0f32; c];
    let mut gb = vec![0.0f32; c];
    let mut gi = Vec::with_capacity(z.len());
    for (gs, zs) in grad_out.data().chunks(c * spatial).zip(z.data().chunks(c * spatial)) {
        for (ch, (gp, zp)) in gs.chunks(spatial).zip(zs.chunks(spatial)).enumerate() {
            for (&g, &v) in gp.iter().zip(zp) {
                gg[ch] += g * (v - bn.mu_ema[ch]) / scale[ch];
                gb[ch] += g;
                gi.push(g * gamma[ch] / scale[ch]);
            }
        }
    }
    Ok(BnGrads {
        input: Tensor::new(z.shape().to_vec(), gi)?,
        gamma: Tensor::new(vec![c], gg)?,
        beta: Tensor::new(vec![c], gb)?,
    })
}
