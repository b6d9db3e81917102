//! Finite-difference checks of every tensor-level backward op.

use rand::Rng;
use spikeshare_core::bn::{bn_backward, fold_backward, BnState};
use spikeshare_core::tensor::{conv2d_backward, fc_backward, maxpool2d, maxpool2d_backward, softmax_xent};
use spikeshare_core::{BnConfig, Tensor};

use super::*;

/// Central difference of `f` at every coordinate of `x`.
pub fn fd(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + H;
            let up = f(&p);
            p[i] = x[i] - H;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * H)
        })
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Default)]
pub struct FdTally {
    pub checked: usize,
    pub failures: Vec<String>,
}

impl FdTally {
    pub fn compare(&mut self, name: &str, analytic: &Tensor, numeric: &[f64]) {
        if analytic.len() != numeric.len() {
            self.failures.push(format!(
                "{name}: {} analytic vs {} numeric",
                analytic.len(),
                numeric.len()
            ));
            return;
        }
        for (i, (&a, &n)) in analytic.data().iter().zip(numeric).enumerate() {
            self.checked += 1;
            if !close(a as f64, n) {
                self.failures.push(format!("{name}[{i}]: analytic {a}, numeric {n}"));
            }
        }
    }

    pub fn assert_clean(&self) {
        assert!(
            self.failures.is_empty(),
            "{} of {} mismatched: {:?}",
            self.failures.len(),
            self.checked,
            self.failures
        );
        assert!(self.checked > 0);
    }
}

pub fn fd_conv2d(seed: u64) -> FdTally {
    let mut r = rng(seed);
    let mut tally = FdTally::default();
    for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
        let dims = (2, 2, 5, 5);
        let x = rand_tensor(&[2, 2, 5, 5], -1.0, 1.0, &mut r);
        let w = rand_tensor(&[3, 2, 3, 3], -1.0, 1.0, &mut r);
        let b = rand_tensor(&[3], -1.0, 1.0, &mut r);
        let (xf, wf, bf) = (to_f64(&x), to_f64(&w), to_f64(&b));
        let (_, od) = conv_ref(&xf, dims, &wf, &bf, 3, 3, stride, pad);
        let g = rand_tensor(&[od.0, od.1, od.2, od.3], -1.0, 1.0, &mut r);
        let gf = to_f64(&g);
        let grads = conv2d_backward(&g, &x, &w, stride, pad).unwrap();
        tally.compare(
            "conv input",
            &grads.input,
            &fd(&xf, |p| dot(&gf, &conv_ref(p, dims, &wf, &bf, 3, 3, stride, pad).0)),
        );
        tally.compare(
            "conv weight",
            &grads.weight,
            &fd(&wf, |p| dot(&gf, &conv_ref(&xf, dims, p, &bf, 3, 3, stride, pad).0)),
        );
        tally.compare(
            "conv bias",
            &grads.bias,
            &fd(&bf, |p| dot(&gf, &conv_ref(&xf, dims, &wf, p, 3, 3, stride, pad).0)),
        );
    }
    tally
}

pub fn fd_fc(seed: u64) -> FdTally {
    let mut r = rng(seed);
    let mut tally = FdTally::default();
    let x = rand_tensor(&[3, 4], -1.0, 1.0, &mut r);
    let w = rand_tensor(&[5, 4], -1.0, 1.0, &mut r);
    let b = rand_tensor(&[5], -1.0, 1.0, &mut r);
    let g = rand_tensor(&[3, 5], -1.0, 1.0, &mut r);
    let (xf, wf, bf, gf) = (to_f64(&x), to_f64(&w), to_f64(&b), to_f64(&g));
    let grads = fc_backward(&g, &x, &w).unwrap();
    tally.compare(
        "fc input",
        &grads.input,
        &fd(&xf, |p| dot(&gf, &fc_ref(p, 3, 4, &wf, &bf))),
    );
    tally.compare(
        "fc weight",
        &grads.weight,
        &fd(&wf, |p| dot(&gf, &fc_ref(&xf, 3, 4, p, &bf))),
    );
    tally.compare(
        "fc bias",
        &grads.bias,
        &fd(&bf, |p| dot(&gf, &fc_ref(&xf, 3, 4, &wf, p))),
    );
    tally
}

pub fn fd_maxpool(seed: u64) -> FdTally {
    let mut r = rng(seed);
    let mut tally = FdTally::default();
    let dims = (2, 2, 4, 6);
    // distinct values spaced well beyond 2H so no window changes its winner
    let mut vals: Vec<f32> = (0..96).map(|i| i as f32 * 0.01).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, r.gen_range(0..=i));
    }
    let x = Tensor::new(vec![2, 2, 4, 6], vals).unwrap();
    let pooled = maxpool2d(&x, 2, 2).unwrap();
    let g = rand_tensor(pooled.output.shape(), -1.0, 1.0, &mut r);
    let gf = to_f64(&g);
    let grad = maxpool2d_backward(&g, &pooled.argmax, x.shape()).unwrap();
    tally.compare(
        "maxpool",
        &grad,
        &fd(&to_f64(&x), |p| dot(&gf, &pool_ref(p, dims, 2, 2).0)),
    );
    if pooled.argmax != pool_ref(&to_f64(&x), dims, 2, 2).1 {
        tally.failures.push("maxpool argmax differs from reference".into());
    }
    tally
}

pub fn fd_bn(seed: u64) -> FdTally {
    let mut r = rng(seed);
    let mut tally = FdTally::default();
    let mut bn = BnState::new(3, &BnConfig::default());
    bn.gamma.value = rand_tensor(&[3], 0.5, 1.5, &mut r);
    bn.beta.value = rand_tensor(&[3], -0.5, 0.5, &mut r);
    bn.mu_ema = vec![0.3, -0.2, 0.1];
    bn.sigma_ema = vec![0.7, 1.3, 2.0];
    let z = rand_tensor(&[2, 3, 2, 2], -2.0, 2.0, &mut r);
    let g = rand_tensor(&[2, 3, 2, 2], -1.0, 1.0, &mut r);
    let (zf, gf) = (to_f64(&z), to_f64(&g));
    let gamma = to_f64(&bn.gamma.value);
    let beta = to_f64(&bn.beta.value);
    let mu: Vec<f64> = bn.mu_ema.iter().map(|&v| v as f64).collect();
    let sigma: Vec<f64> = bn.sigma_ema.iter().map(|&v| v as f64).collect();
    let eps = bn.eps as f64;
    let grads = bn_backward(&g, &z, &bn).unwrap();
    tally.compare(
        "bn input",
        &grads.input,
        &fd(&zf, |p| dot(&gf, &bn_ref(p, 2, 3, &gamma, &beta, &mu, &sigma, eps))),
    );
    tally.compare(
        "bn gamma",
        &grads.gamma,
        &fd(&gamma, |p| dot(&gf, &bn_ref(&zf, 2, 3, p, &beta, &mu, &sigma, eps))),
    );
    tally.compare(
        "bn beta",
        &grads.beta,
        &fd(&beta, |p| dot(&gf, &bn_ref(&zf, 2, 3, &gamma, p, &mu, &sigma, eps))),
    );
    tally
}

/// Reference fold: returns `W_s` and `b_s` concatenated.
fn fold_ref(w: &[f64], b: &[f64], gamma: &[f64], beta: &[f64], bn: &BnState, t: f64) -> Vec<f64> {
    let c = b.len();
    let per = w.len() / c;
    let mut out = Vec::with_capacity(w.len() + c);
    let s: Vec<f64> = (0..c)
        .map(|ch| ((bn.sigma_ema[ch] as f64).powi(2) + bn.eps as f64).sqrt())
        .collect();
    for ch in 0..c {
        out.extend(w[ch * per..(ch + 1) * per].iter().map(|v| gamma[ch] * v / s[ch]));
    }
    for ch in 0..c {
        out.push(gamma[ch] * (b[ch] - bn.mu_ema[ch] as f64) / (t * s[ch]) + beta[ch] / t);
    }
    out
}

pub fn fd_fold(seed: u64) -> FdTally {
    let mut r = rng(seed);
    let mut tally = FdTally::default();
    for t in [1usize, 3, 8] {
        let mut bn = BnState::new(2, &BnConfig::default());
        bn.gamma.value = rand_tensor(&[2], 0.5, 1.5, &mut r);
        bn.beta.value = rand_tensor(&[2], -0.5, 0.5, &mut r);
        bn.mu_ema = vec![0.4, -0.3];
        bn.sigma_ema = vec![0.8, 1.7];
        let w = rand_tensor(&[2, 1, 2, 2], -1.0, 1.0, &mut r);
        let b = rand_tensor(&[2], -1.0, 1.0, &mut r);
        let gw = rand_tensor(&[2, 1, 2, 2], -1.0, 1.0, &mut r);
        let gb = rand_tensor(&[2], -1.0, 1.0, &mut r);
        let mut gcat = to_f64(&gw);
        gcat.extend(to_f64(&gb));
        let (wf, bf) = (to_f64(&w), to_f64(&b));
        let (gamma, beta) = (to_f64(&bn.gamma.value), to_f64(&bn.beta.value));
        let tf = t as f64;
        let grads = fold_backward(&gw, &gb, &w, &b, &bn, t).unwrap();
        tally.compare(
            "fold W",
            &grads.weight,
            &fd(&wf, |p| dot(&gcat, &fold_ref(p, &bf, &gamma, &beta, &bn, tf))),
        );
        tally.compare(
            "fold b",
            &grads.bias,
            &fd(&bf, |p| dot(&gcat, &fold_ref(&wf, p, &gamma, &beta, &bn, tf))),
        );
        tally.compare(
            "fold gamma",
            &grads.gamma,
            &fd(&gamma, |p| dot(&gcat, &fold_ref(&wf, &bf, p, &beta, &bn, tf))),
        );
        tally.compare(
            "fold beta",
            &grads.beta,
            &fd(&beta, |p| dot(&gcat, &fold_ref(&wf, &bf, &gamma, p, &bn, tf))),
        );
    }
    tally
}

pub fn fd_softmax_xent(seed: u64) -> FdTally {
    let mut r = rng(seed);
    let mut tally = FdTally::default();
    let logits = rand_tensor(&[4, 5], -3.0, 3.0, &mut r);
    let labels = [0, 4, 2, 2];
    let (loss, grad) = softmax_xent(&logits, &labels).unwrap();
    let lf = to_f64(&logits);
    if (loss as f64 - xent_ref(&lf, 4, &labels)).abs() >= 1e-6 {
        tally
            .failures
            .push(format!("xent loss {loss} vs {}", xent_ref(&lf, 4, &labels)));
    }
    tally.compare("xent", &grad, &fd(&lf, |p| xent_ref(p, 4, &labels)));
    tally
}

/// Every op check, by name.
pub fn all_op_checks() -> Vec<(&'static str, FdTally)> {
    vec![
        ("conv2d", fd_conv2d(11)),
        ("fc", fd_fc(12)),
        ("maxpool", fd_maxpool(13)),
        ("bn", fd_bn(14)),
        ("fold", fd_fold(15)),
        ("softmax_xent", fd_softmax_xent(16)),
    ]
}
