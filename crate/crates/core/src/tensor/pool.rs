use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PoolOutput {
    pub output: Tensor,
    /// Flat index into the input buffer of each output element's maximum.
    pub argmax: Vec<usize>,
}

/// Max-pooling over `k x k` windows of an NCHW tensor.
///
/// Ties go to the first element in row-major scan order of the window.
pub fn maxpool2d(input: &Tensor, k: usize, stride: usize) -> Result<PoolOutput> {
    let &[n, c, h, w] = input.shape() else {
        return Err(Error::shape(
            "maxpool2d",
            format!("expected [N,C,H,W], got {:?}", input.shape()),
        ));
    };
    if k == 0 || stride == 0 {
        return Err(Error::InvalidArgument("pool kernel and stride must be positive".into()));
    }
    if k > h || k > w {
        return Err(Error::shape(
            "maxpool2d",
            format!("window {k} larger than input {h}x{w}"),
        ));
    }
    let h_out = (h - k) / stride + 1;
    let w_out = (w - k) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * h_out * w_out);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..k {
                    for kx in 0..k {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok(PoolOutput {
        output: Tensor::new(vec![n, c, h_out, w_out], out)?,
        argmax,
    })
}

/// Routes each output gradient back to the input element that won its window.
pub fn maxpool2d_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::shape(
            "maxpool2d_backward",
            format!("{} gradients for {} pooled positions", grad_out.len(), argmax.len()),
        ));
    }
    let mut grad_in = Tensor::zeros(input_shape);
    let gi = grad_in.data_mut();
    for (&g, &idx) in grad_out.data().iter().zip(argmax) {
        let slot = gi
            .get_mut(idx)
            .ok_or_else(|| Error::shape("maxpool2d_backward", format!("argmax {idx} outside input")))?;
        *slot += g;
    }
    Ok(grad_in)
}
