use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct FcGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn dims(op: &'static str, input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize)> {
    let (&[n, f_in], &[f_out, w_in]) = (input.shape(), weight.shape()) else {
        return Err(Error::shape(
            op,
            format!(
                "expected input [N,F_in] and weight [F_out,F_in], got {:?} and {:?}",
                input.shape(),
                weight.shape()
            ),
        ));
    };
    if f_in != w_in {
        return Err(Error::shape(
            op,
            format!("input has {f_in} features, weight expects {w_in}"),
        ));
    }
    Ok((n, f_in, f_out))
}

/// `y = x W^T + b` for `x: [N, F_in]`, `W: [F_out, F_in]`.
pub fn fc_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, f_in, f_out) = dims("fc_forward", input, weight)?;
    if bias.shape() != [f_out] {
        return Err(Error::shape(
            "fc_forward",
            format!("bias {:?} for {f_out} outputs", bias.shape()),
        ));
    }
    let x = input.data();
    let w = weight.data();
    let mut out = Vec::with_capacity(n * f_out);
    for row in x.chunks(f_in.max(1)).take(n) {
        for (o, wrow) in w.chunks(f_in.max(1)).take(f_out).enumerate() {
            let mut acc = bias.data()[o];
            for (a, b) in row.iter().zip(wrow) {
                acc += a * b;
            }
            out.push(acc);
        }
    }
    let out = Tensor::new(vec![n, f_out], out)?;
    out.ensure_finite(|| "fc_forward output".into())?;
    Ok(out)
}

pub fn fc_backward(grad_out: &Tensor, input: &Tensor, weight: &Tensor) -> Result<FcGrads> {
    let (n, f_in, f_out) = dims("fc_backward", input, weight)?;
    if grad_out.shape() != [n, f_out] {
        return Err(Error::shape(
            "fc_backward",
            format!("grad_out {:?}, expected [{n}, {f_out}]", grad_out.shape()),
        ));
    }
    let x = input.data();
    let w = weight.data();
    let g = grad_out.data();
    let mut gi = vec![0.0f32; n * f_in];
    let mut gw = vec![0.0f32; f_out * f_in];
    let mut gb = vec![0.0f32; f_out];
    for s in 0..n {
        let xrow = &x[s * f_in..][..f_in];
        let girow = &mut gi[s * f_in..][..f_in];
        for o in 0..f_out {
            let gv = g[s * f_out + o];
            if gv == 0.0 {
                continue;
            }
            gb[o] += gv;
            let wrow = &w[o * f_in..][..f_in];
            let gwrow = &mut gw[o * f_in..][..f_in];
            for i in 0..f_in {
                girow[i] += gv * wrow[i];
                gwrow[i] += gv * xrow[i];
            }
        }
    }
    Ok(FcGrads {
        input: Tensor::new(vec![n, f_in], gi)?,
        weight: Tensor::new(vec![f_out, f_in], gw)?,
        bias: Tensor::new(vec![f_out], gb)?,
    })
}
