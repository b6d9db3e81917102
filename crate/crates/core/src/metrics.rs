//! Spike accounting, noisy-spike histograms, operation counts and the
//! ANN-over-SNN energy ratio.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::branch::s2a_forward;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{AffineOp, Network, NetworkSpec};
use crate::neuron::SpikeCounts;
use crate::tensor::Tensor;

/// Energy per operation in picojoules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpsModel {
    pub e_mac: f64,
    pub e_add: f64,
}

impl Default for OpsModel {
    fn default() -> Self {
        Self { e_mac: 4.6, e_add: 0.9 }
    }
}

impl OpsModel {
    pub fn validate(&self) -> Result<()> {
        if self.e_mac > 0.0 && self.e_add > 0.0 && self.e_mac.is_finite() && self.e_add.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("energy costs must be positive, got {self:?}")))
        }
    }
}

/// Dense multiply-accumulate count of every weight layer, classifier last.
/// Pooling contributes nothing.
pub fn count_ann_ops(spec: &NetworkSpec) -> Result<Vec<u64>> {
    Ok(spec.plan()?.iter().map(|p| p.ann_ops()).collect())
}

/// Mean spikes per neuron over the window for each layer (total spikes
/// divided by the number of neuron instances in the batch).
pub fn spike_rates(counts: &[SpikeCounts]) -> Result<Vec<f64>> {
    counts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if c.is_empty() {
                Err(Error::InvalidArgument(format!("layer {i}: empty spike counts")))
            } else {
                Ok(c.total() as f64 / c.len() as f64)
            }
        })
        .collect()
}

/// Spiking operation counts: `r_n * A_n` for hidden layers, `A_L` for the
/// classifier. `rates` has one entry per hidden layer.
pub fn spiking_ops(a_ops: &[u64], rates: &[f64]) -> Result<Vec<f64>> {
    if a_ops.len() != rates.len() + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} op counts need {} hidden rates, got {}",
            a_ops.len(),
            a_ops.len().saturating_sub(1),
            rates.len()
        )));
    }
    let mut s: Vec<f64> = a_ops.iter().zip(rates).map(|(&a, &r)| r * a as f64).collect();
    s.push(*a_ops.last().expect("non-empty") as f64);
    Ok(s)
}

/// `E_A / E_S`. The first layer is the encoder and, like the classifier (last
/// entry), is charged at MAC cost; the layers in between are charged at
/// addition cost. A classifier-only network has ratio 1.
pub fn energy_ratio(a_ops: &[f64], s_ops: &[f64], model: &OpsModel) -> Result<f64> {
    let l = a_ops.len();
    if l == 0 || s_ops.len() != l {
        return Err(Error::InvalidArgument(format!("{} A_ops vs {} S_ops", l, s_ops.len())));
    }
    let numer = model.e_mac * a_ops.iter().sum::<f64>();
    let denom = if l == 1 {
        model.e_mac * s_ops[0]
    } else {
        model.e_mac * (s_ops[0] + s_ops[l - 1]) + model.e_add * s_ops[1..l - 1].iter().sum::<f64>()
    };
    if !(denom > 0.0) {
        return Err(Error::InvalidArgument(
            "zero SNN energy; the classifier has no operations".into(),
        ));
    }
    Ok(numer / denom)
}

/// Histogram of per-position noisy counts: entry `k` is the number of
/// positions that emitted exactly `k` spikes while the ANN ReLU was zero.
/// Entry 0 is always 0 and the length is `window + 1`.
pub fn noisy_histogram(counts: &SpikeCounts, relu: &Tensor) -> Result<Vec<u64>> {
    if counts.shape() != relu.shape() {
        return Err(Error::shape(
            "noisy_histogram",
            format!("counts {:?} vs relu {:?}", counts.shape(), relu.shape()),
        ));
    }
    let mut hist = vec![0u64; counts.window() + 1];
    for (&c, &r) in counts.counts().iter().zip(relu.data()) {
        if c > 0 && r <= 0.0 {
            hist[c as usize] += 1;
        }
    }
    Ok(hist)
}

fn merge_hist(into: &mut [u64], from: &[u64]) {
    for (a, b) in into.iter_mut().zip(from) {
        *a += b;
    }
}

/// Per-layer noisy-count histograms over a whole dataset.
pub fn noisy_spike_report(net: &Network, data: &Dataset, batch_size: usize) -> Result<Vec<Vec<u64>>> {
    let mut hists = vec![vec![0u64; net.time_steps() + 1]; net.layers.len()];
    for chunk in batches(data.len(), batch_size)? {
        let (x, _) = data.batch(&chunk)?;
        let fwd = s2a_forward(net, &x)?;
        for (h, (c, relu)) in hists.iter_mut().zip(fwd.counts().iter().zip(fwd.relu_outputs())) {
            merge_hist(h, &noisy_histogram(c, relu)?);
        }
    }
    Ok(hists)
}

fn batches(n: usize, batch_size: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    Ok((0..n)
        .collect::<Vec<_>>()
        .chunks(batch_size)
        .map(|c| c.to_vec())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMetrics {
    pub layer_index: usize,
    /// `conv`, `fc` or `classifier`.
    pub layer_kind: String,
    /// Neurons per image (0 for the classifier).
    pub neurons: usize,
    pub spikes_per_image: f64,
    pub noisy_per_image: f64,
    pub a_ops: u64,
    pub s_ops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub images: usize,
    pub accuracy: f64,
    pub layers: Vec<LayerMetrics>,
    pub e_mac: f64,
    pub e_add: f64,
    pub energy_ratio: f64,
    /// Sum of `spikes_per_image` over spiking layers.
    pub total_spikes_per_image: f64,
    /// Noisy-count histogram per spiking layer.
    pub noisy_histograms: Vec<Vec<u64>>,
    pub thresholds: Vec<f32>,
    /// Threshold of every layer after each training iteration, if recorded.
    #[serde(default)]
    pub threshold_trajectory: Vec<Vec<f32>>,
}

/// Runs both branches over `data` and accumulates accuracy (spiking branch),
/// spike counts, noisy spikes and operation counts.
pub fn evaluate(net: &Network, data: &Dataset, batch_size: usize, model: &OpsModel) -> Result<MetricsReport> {
    model.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let depth = net.layers.len();
    let mut spikes = vec![0u64; depth];
    let mut hists = vec![vec![0u64; net.time_steps() + 1]; depth];
    let mut correct = 0usize;
    for chunk in batches(data.len(), batch_size)? {
        let (x, y) = data.batch(&chunk)?;
        let fwd = s2a_forward(net, &x)?;
        let pred = fwd.snn.logits.argmax_rows()?;
        correct += pred.iter().zip(&y).filter(|(p, t)| p == t).count();
        for (i, (c, relu)) in fwd.counts().iter().zip(fwd.relu_outputs()).enumerate() {
            spikes[i] += c.total();
            merge_hist(&mut hists[i], &noisy_histogram(c, relu)?);
        }
    }
    let images = data.len();
    let a_ops = count_ann_ops(net.spec())?;
    let rates: Vec<f64> = net
        .layers
        .iter()
        .zip(&spikes)
        .map(|(l, &s)| s as f64 / (images * l.plan.neurons()) as f64)
        .collect();
    let s_ops = spiking_ops(&a_ops, &rates)?;
    let a_f: Vec<f64> = a_ops.iter().map(|&a| a as f64).collect();
    let ratio = energy_ratio(&a_f, &s_ops, model)?;

    let mut layers = Vec::with_capacity(depth + 1);
    for (i, layer) in net.layers.iter().enumerate() {
        let noisy: u64 = hists[i].iter().enumerate().map(|(k, &n)| k as u64 * n).sum();
        layers.push(LayerMetrics {
            layer_index: i,
            layer_kind: match layer.plan.op {
                AffineOp::Conv { .. } => "conv".into(),
                AffineOp::Fc => "fc".into(),
            },
            neurons: layer.plan.neurons(),
            spikes_per_image: spikes[i] as f64 / images as f64,
            noisy_per_image: noisy as f64 / images as f64,
            a_ops: a_ops[i],
            s_ops: s_ops[i],
        });
    }
    layers.push(LayerMetrics {
        layer_index: depth,
        layer_kind: "classifier".into(),
        neurons: 0,
        spikes_per_image: 0.0,
        noisy_per_image: 0.0,
        a_ops: a_ops[depth],
        s_ops: s_ops[depth],
    });
    Ok(MetricsReport {
        images,
        accuracy: correct as f64 / images as f64,
        total_spikes_per_image: layers.iter().map(|l| l.spikes_per_image).sum(),
        layers,
        e_mac: model.e_mac,
        e_add: model.e_add,
        energy_ratio: ratio,
        noisy_histograms: hists,
        thresholds: net.thresholds(),
        threshold_trajectory: Vec::new(),
    })
}

pub const CSV_HEADER: [&str; 7] = [
    "layer_index",
    "layer_kind",
    "neurons",
    "spikes_per_image",
    "noisy_per_image",
    "a_ops",
    "s_ops",
];

impl MetricsReport {
    /// Total noisy spikes per image over all layers.
    pub fn noisy_per_image(&self) -> f64 {
        self.layers.iter().map(|l| l.noisy_per_image).sum()
    }

    /// Per-layer rows, a blank line, then an `e_mac,e_add,ratio` block.
    /// Floats use the shortest representation that parses back exactly.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        let err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(CSV_HEADER).map_err(err)?;
        for l in &self.layers {
            w.write_record([
                l.layer_index.to_string(),
                l.layer_kind.clone(),
                l.neurons.to_string(),
                l.spikes_per_image.to_string(),
                l.noisy_per_image.to_string(),
                l.a_ops.to_string(),
                l.s_ops.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush()?;
        let mut inner = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        writeln!(inner)?;
        writeln!(inner, "e_mac,e_add,ratio")?;
        writeln!(inner, "{},{},{}", self.e_mac, self.e_add, self.energy_ratio)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(mut input: impl Read) -> Result<Self> {
        let mut s = String::new();
        input.read_to_string(&mut s)?;
        serde_json::from_str(&s).map_err(|e| Error::Format(e.to_string()))
    }
}
