use super::expect_rank;
use super::gemm::sgemm;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Affine map `input[N, D] · weights[D, K] + bias[K]`.
pub fn fully_connected(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, d, k) = check(input, weights)?;
    if bias.shape() != [k] {
        return Err(Error::config(format!(
            "fully connected bias shape {:?}, expected [{k}]",
            bias.shape()
        )));
    }
    let mut out = Vec::with_capacity(n * k);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    sgemm(n, d, k, input.data(), false, weights.data(), false, 1.0, &mut out);
    Tensor::new([n, k], out)
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn fully_connected_backward(upstream: &Tensor, input: &Tensor, weights: &Tensor) -> Result<LinearGrads> {
    let (n, d, k) = check(input, weights)?;
    if upstream.shape() != [n, k] {
        return Err(Error::config(format!(
            "fully connected upstream gradient shape {:?}, expected [{n}, {k}]",
            upstream.shape()
        )));
    }
    let mut grad_input = vec![0.0; n * d];
    sgemm(n, k, d, upstream.data(), false, weights.data(), true, 0.0, &mut grad_input);
    let mut grad_weights = vec![0.0; d * k];
    sgemm(d, n, k, input.data(), true, upstream.data(), false, 0.0, &mut grad_weights);
    let mut grad_bias = vec![0.0; k];
    for row in upstream.data().chunks_exact(k) {
        grad_bias.iter_mut().zip(row).for_each(|(g, &u)| *g += u);
    }
    Ok(LinearGrads {
        input: Tensor::new([n, d], grad_input)?,
        weights: Tensor::new([d, k], grad_weights)?,
        bias: Tensor::new([k], grad_bias)?,
    })
}

fn check(input: &Tensor, weights: &Tensor) -> Result<(usize, usize, usize)> {
    expect_rank(input, 2, "fully connected input")?;
    expect_rank(weights, 2, "fully connected weights")?;
    let (n, d) = (input.dim(0), input.dim(1));
    if weights.dim(0) != d {
        return Err(Error::config(format!(
            "fully connected input width {d} does not match weight rows {}",
            weights.dim(0)
        )));
    }
    Ok((n, d, weights.dim(1)))
}
