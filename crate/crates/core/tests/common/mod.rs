//! Independent reference implementations used as test oracles. Everything
//! here is written with plain loops in f64 and shares no code with the
//! library beyond reading parameter values.

#![allow(dead_code)]

pub mod fd;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikeshare_core::branch::{s2a_backward, s2a_forward};
use spikeshare_core::network::AffineOp;
use spikeshare_core::tensor::softmax_xent;
use spikeshare_core::{BnConfig, LayerSpec, MappingKind, Network, NetworkSpec, Tensor};

/// Finite-difference step.
pub const H: f64 = 1e-3;

/// Relative agreement at 1e-3 with a 1e-5 absolute floor for near-zero entries.
pub fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-3 * analytic.abs().max(numeric.abs()) + 1e-5
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: &[usize], lo: f32, hi: f32, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Hard-reset IF neuron simulated one scalar at a time.
pub fn scalar_if(inputs: &[f32], v_th: f32) -> Vec<bool> {
    let mut u = 0.0f32;
    let mut fired = false;
    let mut out = Vec::with_capacity(inputs.len());
    for &i in inputs {
        if fired {
            u = 0.0;
        }
        u += i;
        fired = u > v_th;
        out.push(fired);
    }
    out
}

/// NCHW cross-correlation.
#[allow(clippy::too_many_arguments)]
pub fn conv_ref(
    x: &[f64],
    (n, c_in, h, w): (usize, usize, usize, usize),
    wt: &[f64],
    b: &[f64],
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, (usize, usize, usize, usize)) {
    let h_out = (h + 2 * pad - k) / stride + 1;
    let w_out = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * c_out * h_out * w_out];
    for s in 0..n {
        for o in 0..c_out {
            for i in 0..h_out {
                for j in 0..w_out {
                    let mut acc = b[o];
                    for c in 0..c_in {
                        for di in 0..k {
                            for dj in 0..k {
                                let yi = (i * stride + di) as isize - pad as isize;
                                let xj = (j * stride + dj) as isize - pad as isize;
                                if yi < 0 || xj < 0 || yi >= h as isize || xj >= w as isize {
                                    continue;
                                }
                                let xv = x[((s * c_in + c) * h + yi as usize) * w + xj as usize];
                                acc += wt[((o * c_in + c) * k + di) * k + dj] * xv;
                            }
                        }
                    }
                    out[((s * c_out + o) * h_out + i) * w_out + j] = acc;
                }
            }
        }
    }
    (out, (n, c_out, h_out, w_out))
}

/// `[n, f_in] x [f_out, f_in]^T + b`.
pub fn fc_ref(x: &[f64], n: usize, f_in: usize, wt: &[f64], b: &[f64]) -> Vec<f64> {
    let f_out = b.len();
    let mut out = vec![0.0; n * f_out];
    for s in 0..n {
        for o in 0..f_out {
            out[s * f_out + o] = b[o] + (0..f_in).map(|i| wt[o * f_in + i] * x[s * f_in + i]).sum::<f64>();
        }
    }
    out
}

/// Max pooling; returns the output and the flat argmax of each window
/// (first maximum wins).
pub fn pool_ref(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    k: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>) {
    let h_out = (h - k) / stride + 1;
    let w_out = (w - k) / stride + 1;
    let mut out = Vec::with_capacity(n * c * h_out * w_out);
    let mut arg = Vec::with_capacity(out.capacity());
    for s in 0..n {
        for ch in 0..c {
            for i in 0..h_out {
                for j in 0..w_out {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = 0;
                    for di in 0..k {
                        for dj in 0..k {
                            let idx = ((s * c + ch) * h + i * stride + di) * w + j * stride + dj;
                            if x[idx] > best {
                                best = x[idx];
                                at = idx;
                            }
                        }
                    }
                    out.push(best);
                    arg.push(at);
                }
            }
        }
    }
    (out, arg)
}

/// Per-channel affine normalization with fixed statistics; channel is axis 1.
#[allow(clippy::too_many_arguments)]
pub fn bn_ref(
    z: &[f64],
    n: usize,
    c: usize,
    gamma: &[f64],
    beta: &[f64],
    mu: &[f64],
    sigma: &[f64],
    eps: f64,
) -> Vec<f64> {
    let per = z.len() / (n * c);
    let mut out = z.to_vec();
    for s in 0..n {
        for ch in 0..c {
            let sc = (sigma[ch] * sigma[ch] + eps).sqrt();
            for v in &mut out[(s * c + ch) * per..(s * c + ch + 1) * per] {
                *v = gamma[ch] * (*v - mu[ch]) / sc + beta[ch];
            }
        }
    }
    out
}

/// Mean softmax cross-entropy.
pub fn xent_ref(logits: &[f64], n: usize, labels: &[usize]) -> f64 {
    let k = logits.len() / n;
    let mut total = 0.0;
    for s in 0..n {
        let row = &logits[s * k..(s + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[labels[s]];
    }
    total / n as f64
}

/// Signature of the piecewise-linear regions the reference forward passed
/// through; a finite difference is only meaningful if it is the same at
/// both probe points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub relu_active: Vec<bool>,
    pub pool_arg: Vec<usize>,
}

/// Loss of the weight-shared ANN branch in which every mapping unit's
/// output is replaced by `relu_out + offset`: the offsets are fixed, so the
/// spike counts are frozen while gradients pass straight through.
pub fn surrogate_loss(net: &Network, x: &Tensor, offsets: &[Vec<f64>], labels: &[usize]) -> (f64, Pattern) {
    let n = x.shape()[0];
    let t = net.time_steps() as f64;
    let mut act: Vec<f64> = x.data().iter().map(|&v| v as f64 * t).collect();
    let mut pattern = Pattern {
        relu_active: Vec::new(),
        pool_arg: Vec::new(),
    };
    for (layer, off) in net.layers.iter().zip(offsets) {
        let p = &layer.plan;
        let w = to_f64(&layer.weight.value);
        let b = to_f64(&layer.bias.value);
        let c_out = p.out_channels();
        let z = match p.op {
            AffineOp::Conv { stride, padding } => {
                let dims = (n, p.in_shape[0], p.in_shape[1], p.in_shape[2]);
                conv_ref(&act, dims, &w, &b, c_out, p.kernel, stride, padding).0
            }
            AffineOp::Fc => fc_ref(&act, n, p.in_features(), &w, &b),
        };
        let mu: Vec<f64> = layer.bn.mu_ema.iter().map(|&v| v as f64).collect();
        let sigma: Vec<f64> = layer.bn.sigma_ema.iter().map(|&v| v as f64).collect();
        let y = bn_ref(
            &z,
            n,
            c_out,
            &to_f64(&layer.bn.gamma.value),
            &to_f64(&layer.bn.beta.value),
            &mu,
            &sigma,
            layer.bn.eps as f64,
        );
        pattern.relu_active.extend(y.iter().map(|&v| v > 0.0));
        let a: Vec<f64> = y.iter().map(|&v| v.max(0.0)).collect();
        let pooled = match p.pool {
            Some(pool) => {
                let dims = (n, c_out, p.affine_shape[1], p.affine_shape[2]);
                let (o, arg) = pool_ref(&a, dims, pool.kernel, pool.stride);
                pattern.pool_arg.extend(arg);
                o
            }
            None => a,
        };
        act = pooled.iter().zip(off).map(|(v, o)| v + o).collect();
    }
    let cp = &net.classifier.plan;
    let logits = fc_ref(
        &act,
        n,
        cp.in_features(),
        &to_f64(&net.classifier.weight.value),
        &to_f64(&net.classifier.bias.value),
    );
    (xent_ref(&logits, n, labels), pattern)
}

/// Random small network: `hidden` weight layers plus a classifier. Conv
/// stacks work on `[c, s, s]` inputs and may include pooling; otherwise all
/// layers are fully connected.
pub fn random_spec(
    rng: &mut impl Rng,
    hidden: usize,
    time_steps: usize,
    mapping: MappingKind,
    conv: bool,
) -> NetworkSpec {
    let mut layers = Vec::new();
    let input = if conv {
        let c = rng.gen_range(1..=2);
        let mut size = rng.gen_range(5..=8);
        let input = vec![c, size, size];
        for i in 0..hidden {
            if i + 1 < hidden || rng.gen_bool(0.5) {
                let kernel = if size >= 3 { rng.gen_range(1..=3) } else { 1 };
                let padding = rng.gen_range(0..=kernel / 2);
                layers.push(LayerSpec::Conv {
                    kernel,
                    channels: rng.gen_range(1..=3),
                    stride: 1,
                    padding,
                });
                size = size + 2 * padding - kernel + 1;
                if size >= 4 && rng.gen_bool(0.5) {
                    layers.push(LayerSpec::MaxPool { kernel: 2, stride: 2 });
                    size = (size - 2) / 2 + 1;
                }
            } else {
                layers.push(LayerSpec::Fc {
                    out: rng.gen_range(2..=6),
                });
            }
        }
        input
    } else {
        for _ in 0..hidden {
            layers.push(LayerSpec::Fc {
                out: rng.gen_range(2..=8),
            });
        }
        vec![rng.gen_range(2..=6)]
    };
    layers.push(LayerSpec::Fc {
        out: rng.gen_range(2..=4),
    });
    NetworkSpec {
        input,
        time_steps,
        mapping,
        layers,
    }
}

/// Builds a network and randomizes its normalization state and thresholds
/// so that every parameter matters.
pub fn random_network(spec: NetworkSpec, rng: &mut impl Rng) -> Network {
    let mut net = Network::new(spec, &BnConfig::default(), rng).unwrap();
    for layer in &mut net.layers {
        let c = layer.bn.channels();
        layer.bn.gamma.value = rand_tensor(&[c], 0.5, 1.5, rng);
        layer.bn.beta.value = rand_tensor(&[c], -0.2, 0.4, rng);
        layer.bn.mu_ema = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
        layer.bn.sigma_ema = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
        layer.threshold = rng.gen_range(0.2..1.2);
    }
    net
}

pub fn batch_for(net: &Network, n: usize, rng: &mut impl Rng) -> Tensor {
    let mut shape = vec![n];
    shape.extend_from_slice(net.input_shape());
    rand_tensor(&shape, -1.0, 1.0, rng)
}

/// Result of comparing S2A gradients against the counts-frozen surrogate.
pub struct S2aCheck {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
    pub failures: Vec<String>,
}

/// Compares every parameter's S2A gradient with a central difference of the
/// surrogate loss. Coordinates whose probes land in different ReLU/pool
/// regions are skipped.
pub fn s2a_gradient_check(net: &mut Network, x: &Tensor, labels: &[usize]) -> S2aCheck {
    let fwd = s2a_forward(net, x).unwrap();
    let offsets: Vec<Vec<f64>> = fwd
        .ann
        .layers
        .iter()
        .map(|l| {
            l.mapped
                .data()
                .iter()
                .zip(l.relu.data())
                .map(|(&m, &r)| m as f64 - r as f64)
                .collect()
        })
        .collect();
    net.zero_grad();
    let (_, g) = softmax_xent(fwd.logits(), labels).unwrap();
    s2a_backward(net, &fwd.ann, &g).unwrap();
    let analytic: Vec<Vec<f32>> = net.params_mut().iter().map(|p| p.grad.data().to_vec()).collect();

    let mut out = S2aCheck {
        checked: 0,
        skipped: 0,
        worst: 0.0,
        failures: Vec::new(),
    };
    for (pi, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = net.params_mut()[pi].value.data()[i];
            let up = orig + H as f32;
            let down = orig - H as f32;
            net.params_mut()[pi].value.data_mut()[i] = up;
            let (lu, pu) = surrogate_loss(net, x, &offsets, labels);
            net.params_mut()[pi].value.data_mut()[i] = down;
            let (ld, pd) = surrogate_loss(net, x, &offsets, labels);
            net.params_mut()[pi].value.data_mut()[i] = orig;
            if pu != pd {
                out.skipped += 1;
                continue;
            }
            let numeric = (lu - ld) / (up as f64 - down as f64);
            let err = (a as f64 - numeric).abs() / (a.abs() as f64).max(numeric.abs()).max(1e-2);
            out.worst = out.worst.max(err);
            if !close(a as f64, numeric) {
                out.failures
                    .push(format!("param {pi}[{i}]: analytic {a}, numeric {numeric}"));
            }
            out.checked += 1;
        }
    }
    out
}
