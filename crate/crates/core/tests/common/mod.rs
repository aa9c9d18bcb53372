//! Independent f64 reference implementations and finite-difference helpers
//! shared by the integration tests. Nothing here calls into the library's
//! kernels.
#![allow(dead_code)]

pub mod grad;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Naive direct cross-correlation, `x: [n, c, h, w]`, `w: [f, c, kh, kw]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    [n, c, h, w]: [usize; 4],
    wt: &[f64],
    [f, _, kh, kw]: [usize; 4],
    b: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for ni in 0..n {
        for fi in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[fi];
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((ni * c + ci) * h + iy as usize) * w + ix as usize];
                                acc += xv * wt[((fi * c + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((ni * f + fi) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, [n, f, oh, ow])
}

/// `x: [n, d]`, `w: [d, k]`.
pub fn linear(x: &[f64], n: usize, d: usize, wt: &[f64], k: usize, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        for j in 0..k {
            out[i * k + j] = b[j] + (0..d).map(|t| x[i * d + t] * wt[t * k + j]).sum::<f64>();
        }
    }
    out
}

pub fn maxpool(x: &[f64], [n, c, h, w]: [usize; 4], win: usize, stride: usize) -> (Vec<f64>, [usize; 4]) {
    let oh = (h - win) / stride + 1;
    let ow = (w - win) / stride + 1;
    let mut out = vec![f64::NEG_INFINITY; n * c * oh * ow];
    for p in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = &mut out[(p * oh + oy) * ow + ox];
                for ky in 0..win {
                    for kx in 0..win {
                        *o = o.max(x[(p * h + oy * stride + ky) * w + ox * stride + kx]);
                    }
                }
            }
        }
    }
    (out, [n, c, oh, ow])
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub fn dropout(x: &[f64], keep: &[bool], keep_prob: f64) -> Vec<f64> {
    x.iter().zip(keep).map(|(&v, &k)| if k { v / keep_prob } else { 0.0 }).collect()
}

/// Mean softmax cross-entropy of `logits: [n, k]`.
pub fn softmax_ce(logits: &[f64], k: usize, labels: &[usize]) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / n as f64
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over all components.
pub fn max_rel_err(analytic: &[f32], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let a = a as f64;
            (a - n).abs() / a.abs().max(n.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}
