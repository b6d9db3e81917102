//! Forward and backward passes of the two weight-shared branches.
//!
//! The spiking branch integrates folded per-step weights over the window with
//! hard-reset IF neurons. The ANN branch recomputes every layer once from the
//! previous layer's mapped spikes, normalizes with the running statistics,
//! applies ReLU and hands the result to the mapping unit together with the
//! spike counts. Training gradients only flow through the ANN branch; the BPTT
//! baseline differentiates the spiking branch directly.

use crate::bn::{batch_stats, bn_backward, bn_forward, fold_backward};
use crate::error::{Error, Result};
use crate::mapping::MappingUnit;
use crate::network::Network;
use crate::neuron::{rect_surrogate, IfNeurons, ResetMode, SpikeCounts};
use crate::tensor::{maxpool2d, maxpool2d_backward, Tensor};

fn batch_shape(n: usize, per_sample: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(per_sample.len() + 1);
    s.push(n);
    s.extend_from_slice(per_sample);
    s
}

/// Output of the spiking branch for one batch.
#[derive(Debug, Clone)]
pub struct SnnPass {
    /// Accumulated spikes per hidden layer, shaped `[N, ...out_shape]`.
    pub counts: Vec<SpikeCounts>,
    /// Classifier applied to the last layer's counts.
    pub logits: Tensor,
}

/// Per-step state retained for backpropagation through time.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub membrane: Tensor,
    pub spikes: Tensor,
    pub pool_argmax: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct LayerRecord {
    pub weight_s: Tensor,
    pub bias_s: Tensor,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone)]
pub struct SnnRecord {
    pub pass: SnnPass,
    pub layers: Vec<LayerRecord>,
}

fn snn_run(net: &Network, x: &Tensor, record: bool) -> Result<(SnnPass, Vec<LayerRecord>)> {
    let n = net.check_input(x)?;
    let t_steps = net.time_steps();
    let folded: Vec<(Tensor, Tensor)> = net.layers.iter().map(|l| l.folded(t_steps)).collect::<Result<_>>()?;
    let mut neurons: Vec<IfNeurons> = net
        .layers
        .iter()
        .map(|l| IfNeurons::new(&batch_shape(n, &l.plan.out_shape), l.threshold, ResetMode::Hard))
        .collect::<Result<_>>()?;
    let mut counts: Vec<SpikeCounts> = net
        .layers
        .iter()
        .map(|l| SpikeCounts::new(&batch_shape(n, &l.plan.out_shape), t_steps))
        .collect();
    let mut records: Vec<LayerRecord> = if record {
        folded
            .iter()
            .map(|(w, b)| LayerRecord {
                weight_s: w.clone(),
                bias_s: b.clone(),
                steps: Vec::with_capacity(t_steps),
            })
            .collect()
    } else {
        Vec::new()
    };

    // The encoder sees the same image at every step, so its drive is computed once.
    let mut encoder_drive: Option<(Tensor, Option<Vec<usize>>)> = None;

    for _ in 0..t_steps {
        let mut spikes_in: Option<Tensor> = None;
        for (idx, layer) in net.layers.iter().enumerate() {
            let (drive, argmax) = match (idx, &encoder_drive) {
                (0, Some(cached)) => cached.clone(),
                _ => {
                    let input = spikes_in.as_ref().unwrap_or(x);
                    let (w_s, b_s) = &folded[idx];
                    let z = layer.affine(input, w_s, b_s)?;
                    let out = match layer.plan.pool {
                        Some(p) => {
                            let pooled = maxpool2d(&z, p.kernel, p.stride)?;
                            (pooled.output, Some(pooled.argmax))
                        }
                        None => (z, None),
                    };
                    if idx == 0 {
                        encoder_drive = Some(out.clone());
                    }
                    out
                }
            };
            let drive = drive.reshape(&batch_shape(n, &layer.plan.out_shape))?;
            let spikes = neurons[idx]
                .step(&drive)
                .map_err(|e| Error::NonFinite(format!("spiking layer {idx}: {e}")))?;
            counts[idx].add(&spikes)?;
            if record {
                records[idx].steps.push(StepRecord {
                    membrane: neurons[idx].membrane().clone(),
                    spikes: spikes.clone(),
                    pool_argmax: argmax,
                });
            }
            spikes_in = Some(spikes);
        }
    }

    let features = match counts.last() {
        Some(c) => c.to_tensor(),
        None => x.clone(),
    };
    let logits = net.classifier.forward(&features)?;
    logits.ensure_finite(|| "classifier logits".into())?;
    Ok((SnnPass { counts, logits }, records))
}

/// Runs the spiking branch over the full window.
pub fn snn_forward(net: &Network, x: &Tensor) -> Result<SnnPass> {
    Ok(snn_run(net, x, false)?.0)
}

/// Like [`snn_forward`] but keeps membranes, spikes and pooling routes of every step.
pub fn snn_forward_recorded(net: &Network, x: &Tensor) -> Result<SnnRecord> {
    let (pass, layers) = snn_run(net, x, true)?;
    Ok(SnnRecord { pass, layers })
}

/// Spiking-branch inference: argmax of the classifier on accumulated spikes.
pub fn s2a_infer(net: &Network, x: &Tensor) -> Result<Vec<usize>> {
    snn_forward(net, x)?.logits.argmax_rows()
}

/// Cached state of one ANN-branch layer.
#[derive(Debug, Clone)]
pub struct AnnLayerTrace {
    /// Mapped activation of the layer below (the time-summed image for the encoder).
    pub input: Tensor,
    /// Affine pre-activation `W x + b`.
    pub pre_activation: Tensor,
    /// Normalized pre-activation.
    pub normalized: Tensor,
    pub pool_argmax: Option<Vec<usize>>,
    /// ReLU output after pooling; same shape as the spike counts.
    pub relu: Tensor,
    pub unit: MappingUnit,
    /// Mapping-unit output fed to the next layer.
    pub mapped: Tensor,
    /// Per-channel batch mean and standard deviation of `pre_activation`.
    pub batch_mu: Vec<f32>,
    pub batch_sigma: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct AnnPass {
    pub layers: Vec<AnnLayerTrace>,
    pub classifier_input: Tensor,
    pub logits: Tensor,
}

/// Runs the ANN branch given the spike counts of a completed window.
pub fn ann_forward(net: &Network, x: &Tensor, counts: &[SpikeCounts]) -> Result<AnnPass> {
    let n = net.check_input(x)?;
    if counts.len() != net.layers.len() {
        return Err(Error::shape(
            "ann_forward",
            format!("{} count tensors for {} layers", counts.len(), net.layers.len()),
        ));
    }
    let mut input = if net.layers.is_empty() {
        x.clone()
    } else {
        x.scale(net.time_steps() as f32)
    };
    let mut traces = Vec::with_capacity(net.layers.len());
    for (idx, (layer, c)) in net.layers.iter().zip(counts).enumerate() {
        let z = layer.affine(&input, &layer.weight.value, &layer.bias.value)?;
        let (batch_mu, batch_sigma) = batch_stats(&z, layer.bn.channels())?;
        let y = bn_forward(&z, &layer.bn)?;
        let a = y.relu();
        let (relu, pool_argmax) = match layer.plan.pool {
            Some(p) => {
                let pooled = maxpool2d(&a, p.kernel, p.stride)?;
                (pooled.output, Some(pooled.argmax))
            }
            None => (a, None),
        };
        let relu = relu.reshape(&batch_shape(n, &layer.plan.out_shape))?;
        relu.ensure_finite(|| format!("ANN branch layer {idx}"))?;
        let mut unit = MappingUnit::new(net.mapping());
        let mapped = unit.forward(&relu, c).map_err(|e| match e {
            Error::Shape { detail, .. } => Error::shape(
                "mapping unit",
                format!("layer {idx}: branch shapes disagree ({detail}); check pooling placement"),
            ),
            other => other,
        })?;
        traces.push(AnnLayerTrace {
            input: std::mem::replace(&mut input, mapped.clone()),
            pre_activation: z,
            normalized: y,
            pool_argmax,
            relu,
            unit,
            mapped,
            batch_mu,
            batch_sigma,
        });
    }
    let logits = net.classifier.forward(&input)?;
    logits.ensure_finite(|| "ANN branch logits".into())?;
    Ok(AnnPass {
        layers: traces,
        classifier_input: input,
        logits,
    })
}

/// Both branches for one batch.
#[derive(Debug, Clone)]
pub struct S2aForward {
    pub snn: SnnPass,
    pub ann: AnnPass,
}

impl S2aForward {
    /// ANN-branch logits (classifier on mapped spikes).
    pub fn logits(&self) -> &Tensor {
        &self.ann.logits
    }

    pub fn counts(&self) -> &[SpikeCounts] {
        &self.snn.counts
    }

    pub fn relu_outputs(&self) -> impl Iterator<Item = &Tensor> {
        self.ann.layers.iter().map(|l| &l.relu)
    }
}

/// Spiking branch followed by the ANN branch over its spike counts.
pub fn s2a_forward(net: &Network, x: &Tensor) -> Result<S2aForward> {
    let snn = snn_forward(net, x)?;
    let ann = ann_forward(net, x, &snn.counts)?;
    Ok(S2aForward { snn, ann })
}

/// Backpropagates `grad_logits` through the ANN branch and accumulates into
/// the shared parameters' gradients. Spike counts are constants.
pub fn s2a_backward(net: &mut Network, pass: &AnnPass, grad_logits: &Tensor) -> Result<()> {
    if pass.layers.len() != net.layers.len() {
        return Err(Error::shape("s2a_backward", "trace does not match network depth"));
    }
    let g = crate::network::affine_backward(
        crate::network::AffineOp::Fc,
        grad_logits,
        &pass.classifier_input,
        &net.classifier.weight.value,
    )?;
    net.classifier.weight.accumulate(&g.weight)?;
    net.classifier.bias.accumulate(&g.bias)?;
    let mut grad_mapped = g.input;

    for (idx, (layer, trace)) in net.layers.iter_mut().zip(&pass.layers).enumerate().rev() {
        let grad_relu = trace.unit.backward(&grad_mapped)?;
        let grad_a = match &trace.pool_argmax {
            Some(argmax) => {
                let pooled_shape = batch_shape(trace.pre_activation.shape()[0], &layer.plan.out_shape);
                let g = grad_relu.reshape(&pooled_shape)?;
                maxpool2d_backward(&g, argmax, trace.normalized.shape())?
            }
            None => grad_relu.reshape(trace.normalized.shape())?,
        };
        let grad_y = grad_a.zip_map(&trace.normalized, "relu backward", |g, y| if y > 0.0 { g } else { 0.0 })?;
        let bn_g = bn_backward(&grad_y, &trace.pre_activation, &layer.bn)?;
        layer.bn.gamma.accumulate(&bn_g.gamma)?;
        layer.bn.beta.accumulate(&bn_g.beta)?;
        let ag = layer.affine_backward(&bn_g.input, &trace.input, &layer.weight.value)?;
        layer.weight.accumulate(&ag.weight)?;
        layer.bias.accumulate(&ag.bias)?;
        if idx > 0 {
            grad_mapped = ag.input;
        }
    }
    Ok(())
}

/// Backpropagation through time over a recorded spiking pass with the
/// rectangle surrogate of width `surrogate_width`. The reset path
/// `(1 - o^{t-1})` is treated as a constant.
pub fn stbp_backward(
    net: &mut Network,
    x: &Tensor,
    record: &SnnRecord,
    grad_logits: &Tensor,
    surrogate_width: f32,
) -> Result<()> {
    let n = net.check_input(x)?;
    let t_steps = net.time_steps();
    let depth = net.layers.len();
    if record.layers.len() != depth {
        return Err(Error::shape("stbp_backward", "record does not match network depth"));
    }
    let classifier_input = match record.pass.counts.last() {
        Some(c) => c.to_tensor(),
        None => x.clone(),
    };
    let g = crate::network::affine_backward(
        crate::network::AffineOp::Fc,
        grad_logits,
        &classifier_input,
        &net.classifier.weight.value,
    )?;
    net.classifier.weight.accumulate(&g.weight)?;
    net.classifier.bias.accumulate(&g.bias)?;
    if depth == 0 {
        return Ok(());
    }
    // every step's spikes contribute equally to the counts
    let mut grad_spikes: Vec<Tensor> = vec![g.input; t_steps];

    for idx in (0..depth).rev() {
        let layer = &net.layers[idx];
        let rec = &record.layers[idx];
        let out_shape = batch_shape(n, &layer.plan.out_shape);
        let affine_shape = batch_shape(n, &layer.plan.affine_shape);
        let mut grad_ws = Tensor::zeros(rec.weight_s.shape());
        let mut grad_bs = Tensor::zeros(rec.bias_s.shape());
        let mut grad_prev: Vec<Tensor> = Vec::with_capacity(if idx > 0 { t_steps } else { 0 });
        let mut encoder_grad = Tensor::zeros(&affine_shape);
        let mut carry = Tensor::zeros(&out_shape);

        for t in (0..t_steps).rev() {
            let step = &rec.steps[t];
            let sg = rect_surrogate(&step.membrane, layer.threshold, surrogate_width)?;
            let do_t = grad_spikes[t].clone().reshape(&out_shape)?;
            // du^t = do^t * s(u^t) + du^{t+1} * (1 - o^t)
            let mut du = Tensor::zeros(&out_shape);
            {
                let d = du.data_mut();
                for (i, v) in d.iter_mut().enumerate() {
                    *v = do_t.data()[i] * sg.data()[i] + carry.data()[i] * (1.0 - step.spikes.data()[i]);
                }
            }
            let grad_affine = match &step.pool_argmax {
                Some(argmax) => maxpool2d_backward(&du, argmax, &affine_shape)?,
                None => du.clone().reshape(&affine_shape)?,
            };
            if idx == 0 {
                encoder_grad.add_assign(&grad_affine)?;
            } else {
                let input = &record.layers[idx - 1].steps[t].spikes;
                let ag = layer.affine_backward(&grad_affine, input, &rec.weight_s)?;
                grad_ws.add_assign(&ag.weight)?;
                grad_bs.add_assign(&ag.bias)?;
                grad_prev.push(ag.input);
            }
            carry = du;
        }
        if idx == 0 {
            // the encoder input is identical at every step, so its adjoint is linear in the summed gradient
            let ag = layer.affine_backward(&encoder_grad, x, &rec.weight_s)?;
            grad_ws.add_assign(&ag.weight)?;
            grad_bs.add_assign(&ag.bias)?;
        } else {
            grad_prev.reverse();
            grad_spikes = grad_prev;
        }
        let fg = fold_backward(
            &grad_ws,
            &grad_bs,
            &layer.weight.value,
            &layer.bias.value,
            &layer.bn,
            t_steps,
        )?;
        let layer = &mut net.layers[idx];
        layer.weight.accumulate(&fg.weight)?;
        layer.bias.accumulate(&fg.bias)?;
        layer.bn.gamma.accumulate(&fg.gamma)?;
        layer.bn.beta.accumulate(&fg.beta)?;
    }
    Ok(())
}

/// Per-channel statistics of each layer's time-summed pre-activation
/// `W (sum_t x_t) + b`, as seen by the spiking branch.
pub fn snn_batch_stats(net: &Network, x: &Tensor, counts: &[SpikeCounts]) -> Result<Vec<(Vec<f32>, Vec<f32>)>> {
    let mut input = x.scale(net.time_steps() as f32);
    let mut out = Vec::with_capacity(net.layers.len());
    for (layer, c) in net.layers.iter().zip(counts) {
        let z = layer.affine(&input, &layer.weight.value, &layer.bias.value)?;
        out.push(batch_stats(&z, layer.bn.channels())?);
        input = c.to_tensor();
    }
    Ok(out)
}
