//! 2-D convolution (cross-correlation) via im2col and GEMM.

use serde::{Deserialize, Serialize};

use super::expect_rank;
use super::gemm::{dgemm, sgemm};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filter_h: usize,
    pub filter_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Square filter, stride 1, padding that preserves spatial size for odd filters.
    pub fn same(filter: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            filter_h: filter,
            filter_w: filter,
            in_channels,
            out_channels,
            stride: 1,
            padding: filter / 2,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.filter_h, self.filter_w]
    }

    /// Number of inputs feeding one output unit.
    pub fn fan_in(&self) -> usize {
        self.in_channels * self.filter_h * self.filter_w
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::config("convolution stride must be at least 1"));
        }
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.filter_h {
            return Err(Error::config(format!(
                "padded input height {ph} is smaller than filter height {}",
                self.filter_h
            )));
        }
        if pw < self.filter_w {
            return Err(Error::config(format!(
                "padded input width {pw} is smaller than filter width {}",
                self.filter_w
            )));
        }
        Ok((
            (ph - self.filter_h) / self.stride + 1,
            (pw - self.filter_w) / self.stride + 1,
        ))
    }
}

fn check_shapes(input: &Tensor, weights: &Tensor, spec: &ConvSpec) -> Result<(usize, usize)> {
    expect_rank(input, 4, "convolution input")?;
    expect_rank(weights, 4, "convolution weights")?;
    let c = input.dim(1);
    if c != spec.in_channels {
        return Err(Error::config(format!(
            "convolution input channels: input has {c}, spec expects {}",
            spec.in_channels
        )));
    }
    if weights.shape() != spec.weight_shape() {
        let dims = ["out_channels", "in_channels", "filter_h", "filter_w"];
        let bad = (0..4)
            .find(|&i| weights.dim(i) != spec.weight_shape()[i])
            .unwrap_or(0);
        return Err(Error::config(format!(
            "convolution weights {}: weights have {}, spec expects {}",
            dims[bad],
            weights.dim(bad),
            spec.weight_shape()[bad]
        )));
    }
    spec.output_hw(input.dim(2), input.dim(3))
}

/// Unfolds one `[C, H, W]` image into columns `[C·fh·fw, Ho·Wo]`.
fn im2col(image: &[f32], h: usize, w: usize, spec: &ConvSpec, oh: usize, ow: usize, cols: &mut [f32]) {
    let p = oh * ow;
    let pad = spec.padding as isize;
    let stride = spec.stride as isize;
    for c in 0..spec.in_channels {
        let plane = &image[c * h * w..(c + 1) * h * w];
        for ky in 0..spec.filter_h {
            for kx in 0..spec.filter_w {
                let row = (c * spec.filter_h + ky) * spec.filter_w + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = oy as isize * stride + ky as isize - pad;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize * stride + kx as isize - pad;
                        *v = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `image`.
fn col2im(cols: &[f32], h: usize, w: usize, spec: &ConvSpec, oh: usize, ow: usize, image: &mut [f32]) {
    let p = oh * ow;
    let pad = spec.padding as isize;
    let stride = spec.stride as isize;
    for c in 0..spec.in_channels {
        let plane = &mut image[c * h * w..(c + 1) * h * w];
        for ky in 0..spec.filter_h {
            for kx in 0..spec.filter_w {
                let row = (c * spec.filter_h + ky) * spec.filter_w + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = oy as isize * stride + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = ox as isize * stride + kx as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input: [N, C, H, W]` with `weights: [F, C, fh, fw]`
/// plus a per-filter bias, producing `[N, F, Ho, Wo]`.
pub fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let (oh, ow) = check_shapes(input, weights, spec)?;
    if bias.shape() != [spec.out_channels] {
        return Err(Error::config(format!(
            "convolution bias shape {:?}, expected [{}]",
            bias.shape(),
            spec.out_channels
        )));
    }
    let (n, h, w) = (input.dim(0), input.dim(2), input.dim(3));
    let f = spec.out_channels;
    let k = spec.fan_in();
    let p = oh * ow;
    let in_stride = spec.in_channels * h * w;

    // Products accumulate in f64 so each output is rounded to f32 only once.
    let weights64: Vec<f64> = weights.data().iter().map(|&v| v as f64).collect();
    let mut out = vec![0.0f32; n * f * p];
    let mut cols = vec![0.0f32; k * p];
    let mut cols64 = vec![0.0f64; k * p];
    let mut acc = vec![0.0f64; f * p];
    for (image, dst) in input.data().chunks_exact(in_stride).zip(out.chunks_exact_mut(f * p)) {
        im2col(image, h, w, spec, oh, ow, &mut cols);
        cols64.iter_mut().zip(&cols).for_each(|(d, &s)| *d = s as f64);
        dgemm(f, k, p, &weights64, &cols64, &mut acc);
        for ((plane, src), &b) in dst.chunks_exact_mut(p).zip(acc.chunks_exact(p)).zip(bias.data()) {
            let b = b as f64;
            plane.iter_mut().zip(src).for_each(|(d, &s)| *d = (s + b) as f32);
        }
    }
    Tensor::new([n, f, oh, ow], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Reverse-mode gradients of [`conv2d_forward`] with respect to its input,
/// weights and bias.
pub fn conv2d_backward(
    upstream: &Tensor,
    cached_input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
) -> Result<ConvGrads> {
    let (oh, ow) = check_shapes(cached_input, weights, spec)?;
    let (n, h, w) = (cached_input.dim(0), cached_input.dim(2), cached_input.dim(3));
    let f = spec.out_channels;
    let expected = [n, f, oh, ow];
    if upstream.shape() != expected {
        return Err(Error::config(format!(
            "convolution upstream gradient shape {:?}, expected {expected:?}",
            upstream.shape()
        )));
    }
    let k = spec.fan_in();
    let p = oh * ow;
    let in_stride = spec.in_channels * h * w;

    let mut grad_input = vec![0.0f32; cached_input.len()];
    let mut grad_weights = vec![0.0f32; weights.len()];
    let mut grad_bias = vec![0.0f32; f];
    let mut cols = vec![0.0f32; k * p];
    let mut grad_cols = vec![0.0f32; k * p];

    let samples = cached_input
        .data()
        .chunks_exact(in_stride)
        .zip(upstream.data().chunks_exact(f * p))
        .zip(grad_input.chunks_exact_mut(in_stride));
    for ((image, dout), dimage) in samples {
        im2col(image, h, w, spec, oh, ow, &mut cols);
        // dW[F, K] += dOut[F, P] · cols[K, P]^T
        sgemm(f, p, k, dout, false, &cols, true, 1.0, &mut grad_weights);
        // dCols[K, P] = W[F, K]^T · dOut[F, P]
        sgemm(k, f, p, weights.data(), true, dout, false, 0.0, &mut grad_cols);
        col2im(&grad_cols, h, w, spec, oh, ow, dimage);
        for (gb, plane) in grad_bias.iter_mut().zip(dout.chunks_exact(p)) {
            *gb += plane.iter().sum::<f32>();
        }
    }

    Ok(ConvGrads {
        input: Tensor::new(cached_input.shape(), grad_input)?,
        weights: Tensor::new(weights.shape(), grad_weights)?,
        bias: Tensor::new([f], grad_bias)?,
    })
}
