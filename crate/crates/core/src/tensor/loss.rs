use super::Tensor;
use crate::error::{Error, Result};

/// Mean softmax cross-entropy over a `[N, K]` batch of logits.
///
/// Returns the loss and `(softmax - onehot) / N`.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    let &[n, k] = logits.shape() else {
        return Err(Error::shape(
            "softmax_xent",
            format!("expected [N, K], got {:?}", logits.shape()),
        ));
    };
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_xent",
            format!("{n} rows but {} labels", labels.len()),
        ));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("softmax_xent on an empty batch".into()));
    }
    let mut grad = Vec::with_capacity(n * k);
    let mut total = 0.0f64;
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        if label >= k {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f64> = row.iter().map(|&v| ((v - max) as f64).exp()).collect();
        let z: f64 = exps.iter().sum();
        total += z.ln() - (row[label] - max) as f64;
        for (j, e) in exps.iter().enumerate() {
            let onehot = if j == label { 1.0 } else { 0.0 };
            grad.push(((e / z - onehot) / n as f64) as f32);
        }
    }
    let loss = (total / n as f64) as f32;
    if !loss.is_finite() {
        return Err(Error::NonFinite("softmax_xent loss".into()));
    }
    Ok((loss, Tensor::new(vec![n, k], grad)?))
}
