use super::Tensor;
use crate::error::{Error, Result};

/// Gradients returned by [`conv2d_backward`].
#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// `floor((size + 2*padding - kernel) / stride) + 1`, or `None` when the
/// kernel does not fit.
pub fn conv_output_dim(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct Geometry {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    h_out: usize,
    w_out: usize,
}

fn geometry(op: &'static str, input: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Geometry> {
    let (&[n, c_in, h, w], &[c_out, wc_in, kh, kw]) = (input.shape(), weight.shape()) else {
        return Err(Error::shape(
            op,
            format!(
                "expected input [N,C,H,W] and weight [C_out,C_in,kh,kw], got {:?} and {:?}",
                input.shape(),
                weight.shape()
            ),
        ));
    };
    if wc_in != c_in {
        return Err(Error::shape(
            op,
            format!("input has {c_in} channels, weight expects {wc_in}"),
        ));
    }
    let h_out = conv_output_dim(h, kh, stride, padding);
    let w_out = conv_output_dim(w, kw, stride, padding);
    let (Some(h_out), Some(w_out)) = (h_out, w_out) else {
        return Err(Error::shape(
            op,
            format!("kernel {kh}x{kw} (stride {stride}, pad {padding}) does not fit {h}x{w}"),
        ));
    };
    Ok(Geometry {
        n,
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        h_out,
        w_out,
    })
}

/// Valid output columns `ox` for kernel column `kx`: those with
/// `0 <= ox*stride + kx - padding < w`.
#[inline]
fn valid_range(k: usize, stride: usize, padding: usize, size: usize, out: usize) -> (usize, usize) {
    // smallest o with o*stride + k >= padding
    let lo = if k >= padding {
        0
    } else {
        (padding - k).div_ceil(stride)
    };
    // largest o with o*stride + k - padding <= size - 1
    let limit = size + padding;
    let hi = if k >= limit {
        0
    } else {
        ((limit - 1 - k) / stride + 1).min(out)
    };
    (lo.min(hi), hi)
}

/// 2-D cross-correlation over an NCHW batch.
pub fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = geometry("conv2d_forward", input, weight, stride, padding)?;
    if bias.shape() != [g.c_out] {
        return Err(Error::shape(
            "conv2d_forward",
            format!("bias {:?} for {} output channels", bias.shape(), g.c_out),
        ));
    }
    let x = input.data();
    let wt = weight.data();
    let plane_in = g.h * g.w;
    let plane_out = g.h_out * g.w_out;
    let mut out = vec![0.0f32; g.n * g.c_out * plane_out];

    for n in 0..g.n {
        for co in 0..g.c_out {
            let dst = &mut out[(n * g.c_out + co) * plane_out..][..plane_out];
            dst.fill(bias.data()[co]);
            for ci in 0..g.c_in {
                let src = &x[(n * g.c_in + ci) * plane_in..][..plane_in];
                for ky in 0..g.kh {
                    let (oy_lo, oy_hi) = valid_range(ky, stride, padding, g.h, g.h_out);
                    for kx in 0..g.kw {
                        let wv = wt[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx];
                        let (ox_lo, ox_hi) = valid_range(kx, stride, padding, g.w, g.w_out);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - padding;
                            let row_in = &src[iy * g.w..][..g.w];
                            let row_out = &mut dst[oy * g.w_out..][..g.w_out];
                            for ox in ox_lo..ox_hi {
                                row_out[ox] += wv * row_in[ox * stride + kx - padding];
                            }
                        }
                    }
                }
            }
        }
    }
    let out = Tensor::new(vec![g.n, g.c_out, g.h_out, g.w_out], out)?;
    out.ensure_finite(|| "conv2d_forward output".into())?;
    Ok(out)
}

/// Adjoint of [`conv2d_forward`] with respect to input, weight and bias.
#[allow(clippy::needless_range_loop)]
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Conv2dGrads> {
    let g = geometry("conv2d_backward", input, weight, stride, padding)?;
    let expected = [g.n, g.c_out, g.h_out, g.w_out];
    if grad_out.shape() != expected {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad_out {:?}, forward output is {expected:?}", grad_out.shape()),
        ));
    }
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    let plane_in = g.h * g.w;
    let plane_out = g.h_out * g.w_out;
    let mut gi = vec![0.0f32; x.len()];
    let mut gw = vec![0.0f32; wt.len()];
    let mut gb = vec![0.0f32; g.c_out];

    for n in 0..g.n {
        for co in 0..g.c_out {
            let gplane = &go[(n * g.c_out + co) * plane_out..][..plane_out];
            gb[co] += gplane.iter().sum::<f32>();
            for ci in 0..g.c_in {
                let base_in = (n * g.c_in + ci) * plane_in;
                let src = &x[base_in..][..plane_in];
                for ky in 0..g.kh {
                    let (oy_lo, oy_hi) = valid_range(ky, stride, padding, g.h, g.h_out);
                    for kx in 0..g.kw {
                        let widx = ((co * g.c_in + ci) * g.kh + ky) * g.kw + kx;
                        let wv = wt[widx];
                        let (ox_lo, ox_hi) = valid_range(kx, stride, padding, g.w, g.w_out);
                        let mut acc = 0.0f32;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - padding;
                            let grow = &gplane[oy * g.w_out..][..g.w_out];
                            let row_in = &src[iy * g.w..][..g.w];
                            let row_gi = &mut gi[base_in + iy * g.w..][..g.w];
                            for ox in ox_lo..ox_hi {
                                let ix = ox * stride + kx - padding;
                                acc += grow[ox] * row_in[ix];
                                row_gi[ix] += wv * grow[ox];
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    Ok(Conv2dGrads {
        input: Tensor::new(input.shape().to_vec(), gi)?,
        weight: Tensor::new(weight.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![g.c_out], gb)?,
    })
}
