//! Spike mapping units: place accumulated SNN spikes onto the ANN branch in
//! the forward pass and hand gradients straight through to the ReLU output in
//! the backward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::SpikeCounts;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingKind {
    /// Spike counts masked by the positivity of the ReLU output.
    Resu,
    /// Raw spike counts; the ReLU output only carries the gradient.
    Stsu,
}

impl MappingKind {
    pub fn name(self) -> &'static str {
        match self {
            MappingKind::Resu => "resu",
            MappingKind::Stsu => "stsu",
        }
    }
}

fn check_shapes(op: &'static str, relu_out: &Tensor, counts: &SpikeCounts) -> Result<()> {
    if relu_out.shape() != counts.shape() {
        return Err(Error::shape(
            op,
            format!("relu {:?} vs counts {:?}", relu_out.shape(), counts.shape()),
        ));
    }
    Ok(())
}

/// `Sign(relu_out) * counts`, with `Sign(0) = 0`.
pub fn resu_forward(relu_out: &Tensor, counts: &SpikeCounts) -> Result<Tensor> {
    check_shapes("resu_forward", relu_out, counts)?;
    let data = relu_out
        .data()
        .iter()
        .zip(counts.counts())
        .map(|(&r, &c)| if r > 0.0 { c as f32 } else { 0.0 })
        .collect();
    Tensor::new(relu_out.shape().to_vec(), data)
}

/// `counts + relu_out - stop_grad(relu_out)`. The two ReLU terms cancel in
/// value, so the counts are returned directly.
pub fn stsu_forward(relu_out: &Tensor, counts: &SpikeCounts) -> Result<Tensor> {
    check_shapes("stsu_forward", relu_out, counts)?;
    Ok(counts.to_tensor())
}

/// Straight-through: the upstream gradient reaches the ReLU output unchanged.
/// Spike counts receive no gradient.
pub fn resu_backward(grad_xq: &Tensor) -> Tensor {
    grad_xq.clone()
}

/// Same identity rule as [`resu_backward`].
pub fn stsu_backward(grad_xq: &Tensor) -> Tensor {
    grad_xq.clone()
}

/// One mapping unit instance for a single forward/backward pair.
#[derive(Debug, Clone)]
pub struct MappingUnit {
    kind: MappingKind,
    cache: Option<(Tensor, SpikeCounts)>,
}

impl MappingUnit {
    pub fn new(kind: MappingKind) -> Self {
        Self { kind, cache: None }
    }

    pub fn kind(&self) -> MappingKind {
        self.kind
    }

    pub fn forward(&mut self, relu_out: &Tensor, counts: &SpikeCounts) -> Result<Tensor> {
        let out = match self.kind {
            MappingKind::Resu => resu_forward(relu_out, counts)?,
            MappingKind::Stsu => stsu_forward(relu_out, counts)?,
        };
        self.cache = Some((relu_out.clone(), counts.clone()));
        Ok(out)
    }

    pub fn backward(&self, grad_xq: &Tensor) -> Result<Tensor> {
        let (relu, _) = self
            .cache
            .as_ref()
            .ok_or(Error::BackwardBeforeForward("mapping unit"))?;
        relu.expect_same_shape(grad_xq, "mapping unit backward")?;
        Ok(match self.kind {
            MappingKind::Resu => resu_backward(grad_xq),
            MappingKind::Stsu => stsu_backward(grad_xq),
        })
    }

    pub fn cached_relu(&self) -> Option<&Tensor> {
        self.cache.as_ref().map(|(r, _)| r)
    }

    pub fn cached_counts(&self) -> Option<&SpikeCounts> {
        self.cache.as_ref().map(|(_, c)| c)
    }
}
