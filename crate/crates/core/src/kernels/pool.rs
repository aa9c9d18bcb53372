use super::expect_rank;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct PoolOutput {
    pub output: Tensor,
    /// Flat index into the input of the element chosen for each output cell.
    pub argmax: Vec<usize>,
}

/// Max pooling over `[N, C, H, W]`. Ties resolve to the lowest flat index.
pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<PoolOutput> {
    expect_rank(input, 4, "max-pool input")?;
    if window == 0 || stride == 0 {
        return Err(Error::config("max-pool window and stride must be at least 1"));
    }
    let (n, c, h, w) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    if h < window || w < window {
        return Err(Error::config(format!(
            "max-pool window {window} larger than input {h}x{w}"
        )));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let data = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + oy * stride * w + ox * stride;
                let mut best = data[best_idx];
                for ky in 0..window {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for (idx, &v) in (row..).zip(&data[row..row + window]) {
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok(PoolOutput {
        output: Tensor::new([n, c, oh, ow], out)?,
        argmax,
    })
}

/// Routes each upstream value to the input position recorded in `argmax`.
pub fn maxpool2d_backward(upstream: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if upstream.len() != argmax.len() {
        return Err(Error::config(format!(
            "max-pool backward: {} upstream values for {} argmax entries",
            upstream.len(),
            argmax.len()
        )));
    }
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&idx, &u) in argmax.iter().zip(upstream.data()) {
        let slot = g.get_mut(idx).ok_or_else(|| {
            Error::config(format!("max-pool argmax {idx} outside input shape {input_shape:?}"))
        })?;
        *slot += u;
    }
    Ok(grad)
}
