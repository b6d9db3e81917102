//! Integrate-and-fire neurons, spike accumulation over a time window, and the
//! rectangle surrogate gradient used by the BPTT baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{fc_forward, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetMode {
    /// The membrane is zeroed on the step after a spike.
    Hard,
    /// The threshold is subtracted on the step after a spike.
    Soft,
}

/// A population of IF neurons sharing one firing threshold.
///
/// Membrane and previous-step spikes start at zero.
#[derive(Debug, Clone)]
pub struct IfNeurons {
    membrane: Tensor,
    last_spikes: Tensor,
    threshold: f32,
    reset: ResetMode,
}

impl IfNeurons {
    pub fn new(shape: &[usize], threshold: f32, reset: ResetMode) -> Result<Self> {
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "firing threshold must be positive, got {threshold}"
            )));
        }
        Ok(Self {
            membrane: Tensor::zeros(shape),
            last_spikes: Tensor::zeros(shape),
            threshold,
            reset,
        })
    }

    pub fn threshold(&self) -> f32 {
        self.threshold
    }

    pub fn reset_mode(&self) -> ResetMode {
        self.reset
    }

    pub fn membrane(&self) -> &Tensor {
        &self.membrane
    }

    pub fn last_spikes(&self) -> &Tensor {
        &self.last_spikes
    }

    /// Membrane left over after the pending reset is applied; this is the value
    /// the next step starts integrating from.
    pub fn residual_membrane(&self) -> Tensor {
        let th = self.threshold;
        match self.reset {
            ResetMode::Hard => self
                .membrane
                .zip_map(&self.last_spikes, "residual", |u, o| u * (1.0 - o))
                .expect("membrane and spikes share a shape"),
            ResetMode::Soft => self
                .membrane
                .zip_map(&self.last_spikes, "residual", |u, o| u - o * th)
                .expect("membrane and spikes share a shape"),
        }
    }

    /// Integrates one step of synaptic input (weights and bias already
    /// applied) and returns the binary spike tensor.
    pub fn step(&mut self, input: &Tensor) -> Result<Tensor> {
        self.membrane.expect_same_shape(input, "if_step")?;
        let th = self.threshold;
        let u = self.membrane.data_mut();
        let o = self.last_spikes.data_mut();
        match self.reset {
            ResetMode::Hard => {
                for ((u, o), &x) in u.iter_mut().zip(o.iter_mut()).zip(input.data()) {
                    *u = *u * (1.0 - *o) + x;
                    *o = if *u > th { 1.0 } else { 0.0 };
                }
            }
            ResetMode::Soft => {
                for ((u, o), &x) in u.iter_mut().zip(o.iter_mut()).zip(input.data()) {
                    *u = *u + x - *o * th;
                    *o = if *u > th { 1.0 } else { 0.0 };
                }
            }
        }
        if !self.membrane.is_finite() {
            return Err(Error::NonFinite("IF membrane potential".into()));
        }
        Ok(self.last_spikes.clone())
    }
}

/// See [`IfNeurons::step`].
pub fn if_step(layer: &mut IfNeurons, synaptic_input: &Tensor) -> Result<Tensor> {
    layer.step(synaptic_input)
}

/// Per-neuron spike counts over a window of `window` steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeCounts {
    shape: Vec<usize>,
    counts: Vec<u32>,
    window: usize,
}

impl SpikeCounts {
    pub fn new(shape: &[usize], window: usize) -> Self {
        Self {
            shape: shape.to_vec(),
            counts: vec![0; shape.iter().product()],
            window,
        }
    }

    /// Builds counts from explicit values; every value must lie in `[0, window]`.
    pub fn from_counts(shape: &[usize], counts: Vec<u32>, window: usize) -> Result<Self> {
        if shape.iter().product::<usize>() != counts.len() {
            return Err(Error::shape(
                "SpikeCounts::from_counts",
                format!("{shape:?} vs {} counts", counts.len()),
            ));
        }
        if let Some(&c) = counts.iter().find(|&&c| c as usize > window) {
            return Err(Error::InvalidArgument(format!("count {c} exceeds window {window}")));
        }
        Ok(Self {
            shape: shape.to_vec(),
            counts,
            window,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Adds one binary spike tensor.
    pub fn add(&mut self, spikes: &Tensor) -> Result<()> {
        if spikes.shape() != self.shape.as_slice() {
            return Err(Error::shape(
                "SpikeCounts::add",
                format!("{:?} vs {:?}", spikes.shape(), self.shape),
            ));
        }
        for (c, &s) in self.counts.iter_mut().zip(spikes.data()) {
            *c += (s > 0.0) as u32;
        }
        Ok(())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.shape.clone(), self.counts.iter().map(|&c| c as f32).collect()).expect("counts match shape")
    }
}

/// Result of simulating a layer over a full window.
#[derive(Debug, Clone)]
pub struct WindowOutput {
    pub counts: SpikeCounts,
    pub spike_trains: Vec<Tensor>,
    pub membranes: Vec<Tensor>,
}

/// Feeds `per_step_inputs[t]` at step `t` and accumulates the spikes.
pub fn run_window(layer: &mut IfNeurons, per_step_inputs: &[Tensor]) -> Result<WindowOutput> {
    if per_step_inputs.is_empty() {
        return Err(Error::InvalidArgument("time window must have at least one step".into()));
    }
    let mut counts = SpikeCounts::new(layer.membrane.shape(), per_step_inputs.len());
    let mut spike_trains = Vec::with_capacity(per_step_inputs.len());
    let mut membranes = Vec::with_capacity(per_step_inputs.len());
    for input in per_step_inputs {
        let spikes = layer.step(input)?;
        counts.add(&spikes)?;
        membranes.push(layer.membrane.clone());
        spike_trains.push(spikes);
    }
    Ok(WindowOutput {
        counts,
        spike_trains,
        membranes,
    })
}

/// Outcome of [`rate_identity_check`], one value per output neuron.
#[derive(Debug, Clone)]
pub struct RateIdentity {
    /// Firing rate minus the closed-form rate reconstructed from the drive and
    /// the residual membrane. Zero up to rounding for any window length.
    pub residual: Tensor,
    /// Distance between the firing rate and the clipped analog activation;
    /// shrinks as the window grows.
    pub clip_gap: Tensor,
    pub rates: Tensor,
}

/// Drives a soft-reset layer with the constant current `W r + b` for `t` steps
/// and compares its firing rate with the rate-coding identities.
///
/// The membrane term uses the residual potential after the final step's reset,
/// which makes the identity exact under delayed subtraction.
pub fn rate_identity_check(
    weights: &Tensor,
    bias: &Tensor,
    input_rates: &Tensor,
    v_th: f32,
    t: usize,
    reset: ResetMode,
) -> Result<RateIdentity> {
    if reset != ResetMode::Soft {
        return Err(Error::InvalidArgument(
            "rate identity only holds for soft-reset neurons".into(),
        ));
    }
    if t == 0 {
        return Err(Error::InvalidArgument("time window must have at least one step".into()));
    }
    let drive = fc_forward(input_rates, weights, bias)?;
    let mut layer = IfNeurons::new(drive.shape(), v_th, reset)?;
    let mut counts = SpikeCounts::new(drive.shape(), t);
    for _ in 0..t {
        let spikes = layer.step(&drive)?;
        counts.add(&spikes)?;
    }
    let residual_u = layer.residual_membrane();
    let tf = t as f64;
    let th = v_th as f64;
    let mut residual = Vec::with_capacity(drive.len());
    let mut gap = Vec::with_capacity(drive.len());
    let mut rates = Vec::with_capacity(drive.len());
    for ((&c, &z), &u) in counts.counts().iter().zip(drive.data()).zip(residual_u.data()) {
        let r = c as f64 / tf;
        let predicted = z as f64 / th - u as f64 / (tf * th);
        residual.push((r - predicted) as f32);
        gap.push((r - (z as f64 / th).clamp(0.0, 1.0)).abs() as f32);
        rates.push(r as f32);
    }
    let shape = drive.shape().to_vec();
    Ok(RateIdentity {
        residual: Tensor::new(shape.clone(), residual)?,
        clip_gap: Tensor::new(shape.clone(), gap)?,
        rates: Tensor::new(shape, rates)?,
    })
}

/// Rectangle pseudo-derivative of the spike function:
/// `(1/a) * [|u - v_th| < a/2]`.
pub fn rect_surrogate(u: &Tensor, v_th: f32, a: f32) -> Result<Tensor> {
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "surrogate width must be positive, got {a}"
        )));
    }
    let half = a / 2.0;
    let height = 1.0 / a;
    Ok(u.map(|v| if (v - v_th).abs() < half { height } else { 0.0 }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn steps(values: &[f32]) -> Vec<Tensor> {
        values.iter().map(|&v| Tensor::new(vec![1], vec![v]).unwrap()).collect()
    }

    #[test]
    fn hard_reset_hand_trace() {
        let mut layer = IfNeurons::new(&[1], 1.0, ResetMode::Hard).unwrap();
        let out = run_window(&mut layer, &steps(&[0.6, 0.6, 0.6])).unwrap();
        let spikes: Vec<f32> = out.spike_trains.iter().map(|s| s.data()[0]).collect();
        let membrane: Vec<f32> = out.membranes.iter().map(|m| m.data()[0]).collect();
        assert_eq!(spikes, vec![0.0, 1.0, 0.0]);
        assert_eq!(membrane, vec![0.6, 1.2, 0.6]);
        assert_eq!(out.counts.counts(), &[1]);
    }

    #[test]
    fn silent_without_input() {
        let mut layer = IfNeurons::new(&[3], 0.3, ResetMode::Hard).unwrap();
        let inputs = vec![Tensor::zeros(&[3]); 10];
        let out = run_window(&mut layer, &inputs).unwrap();
        assert_eq!(out.counts.total(), 0);
        assert!(layer.membrane().data().iter().all(|&u| u == 0.0));
    }

    #[test]
    fn double_threshold_input_fires_every_step() {
        let mut layer = IfNeurons::new(&[1], 0.7, ResetMode::Hard).unwrap();
        let out = run_window(&mut layer, &steps(&[1.4; 6])).unwrap();
        assert_eq!(out.counts.counts(), &[6]);
    }

    #[test]
    fn equality_does_not_fire() {
        let mut layer = IfNeurons::new(&[1], 1.0, ResetMode::Hard).unwrap();
        assert_eq!(layer.step(&Tensor::scalar(1.0)).unwrap().data(), &[0.0]);
    }

    #[test]
    fn soft_reset_subtracts_threshold() {
        let mut layer = IfNeurons::new(&[1], 1.0, ResetMode::Soft).unwrap();
        let out = run_window(&mut layer, &steps(&[0.75; 4])).unwrap();
        let membrane: Vec<f32> = out.membranes.iter().map(|m| m.data()[0]).collect();
        // 0.75, 1.5 (fires), 1.5 - 1 + 0.75 = 1.25 (fires), 1.25 - 1 + 0.75 = 1.0
        assert_eq!(membrane, vec![0.75, 1.5, 1.25, 1.0]);
        assert_eq!(out.counts.counts(), &[2]);
    }

    #[test]
    fn single_step_window_counts_equal_spikes() {
        let mut layer = IfNeurons::new(&[3], 0.5, ResetMode::Hard).unwrap();
        let input = Tensor::new(vec![3], vec![0.2, 0.9, 0.51]).unwrap();
        let out = run_window(&mut layer, std::slice::from_ref(&input)).unwrap();
        assert_eq!(out.counts.to_tensor(), out.spike_trains[0]);
    }

    #[test]
    fn empty_window_rejected() {
        let mut layer = IfNeurons::new(&[1], 1.0, ResetMode::Hard).unwrap();
        assert!(run_window(&mut layer, &[]).is_err());
    }

    #[test]
    fn non_positive_threshold_rejected() {
        assert!(IfNeurons::new(&[1], 0.0, ResetMode::Hard).is_err());
        assert!(IfNeurons::new(&[1], -1.0, ResetMode::Soft).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut layer = IfNeurons::new(&[2], 1.0, ResetMode::Hard).unwrap();
        assert!(layer.step(&Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn counts_validated_against_window() {
        assert!(SpikeCounts::from_counts(&[2], vec![1, 5], 4).is_err());
        assert!(SpikeCounts::from_counts(&[2], vec![1, 4], 4).is_ok());
    }

    #[test]
    fn surrogate_window() {
        let u = Tensor::new(vec![3], vec![1.0, 2.0, 0.5]).unwrap();
        let g = rect_surrogate(&u, 1.0, 1.0).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0]);
        assert!(rect_surrogate(&u, 1.0, 0.0).is_err());
    }

    #[test]
    fn rate_identity_zero_drive() {
        let w = Tensor::zeros(&[2, 3]);
        let r = Tensor::new(vec![1, 3], vec![0.5, 0.2, 1.0]).unwrap();
        let out = rate_identity_check(&w, &Tensor::zeros(&[2]), &r, 0.8, 8, ResetMode::Soft).unwrap();
        assert!(out.rates.data().iter().all(|&v| v == 0.0));
        assert!(out.residual.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rate_identity_rejects_hard_reset() {
        let w = Tensor::zeros(&[1, 1]);
        let r = Tensor::zeros(&[1, 1]);
        assert!(rate_identity_check(&w, &Tensor::zeros(&[1]), &r, 1.0, 4, ResetMode::Hard).is_err());
    }
}
