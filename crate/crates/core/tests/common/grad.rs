//! Finite-difference gradient checks: each returns the worst relative error
//! of every random instance.

use htcnn_core::kernels::{
    conv2d_backward, fully_connected_backward, maxpool2d, maxpool2d_backward, relu_backward,
    softmax_cross_entropy, ConvSpec, DropoutMask,
};
use htcnn_core::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

use super::*;

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor: components below this magnitude are compared absolutely.
pub const FLOOR: f64 = 1e-3;
pub const INSTANCES: u64 = 25;

fn tensor(shape: &[usize], data: &[f32]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

/// Scalar objective `sum(r * y)`; its gradient with respect to `y` is `r`.
fn probe(rng: &mut impl Rng, len: usize) -> Vec<f32> {
    uniform(rng, len, -1.0, 1.0)
}

pub fn conv(seed: u64) -> f64 {
    let mut g = rng(seed);
    let n = g.random_range(1..=2);
    let c = g.random_range(1..=3);
    let h = g.random_range(3..=7);
    let w = g.random_range(3..=7);
    let f = g.random_range(1..=3);
    let k = g.random_range(1..=3usize).min(h).min(w);
    let stride = g.random_range(1..=2);
    let padding = g.random_range(0..=1);
    let spec = ConvSpec { filter_h: k, filter_w: k, in_channels: c, out_channels: f, stride, padding };
    let xs = [n, c, h, w];
    let ws = [f, c, k, k];
    let x = uniform(&mut g, n * c * h * w, -1.0, 1.0);
    let wt = uniform(&mut g, f * c * k * k, -1.0, 1.0);
    let b = uniform(&mut g, f, -1.0, 1.0);
    let (_, ys) = conv2d(&widen(&x), xs, &widen(&wt), ws, &widen(&b), stride, padding);
    let r = probe(&mut g, ys.iter().product());
    let grads = conv2d_backward(&tensor(&ys, &r), &tensor(&xs, &x), &tensor(&ws, &wt), &spec).unwrap();

    let (x64, w64, b64, r64) = (widen(&x), widen(&wt), widen(&b), widen(&r));
    let nx = central_diff(&x64, STEP, |v| dot(&conv2d(v, xs, &w64, ws, &b64, stride, padding).0, &r64));
    let nw = central_diff(&w64, STEP, |v| dot(&conv2d(&x64, xs, v, ws, &b64, stride, padding).0, &r64));
    let nb = central_diff(&b64, STEP, |v| dot(&conv2d(&x64, xs, &w64, ws, v, stride, padding).0, &r64));
    max_rel_err(grads.input.data(), &nx, FLOOR)
        .max(max_rel_err(grads.weights.data(), &nw, FLOOR))
        .max(max_rel_err(grads.bias.data(), &nb, FLOOR))
}

pub fn fully_connected(seed: u64) -> f64 {
    let mut g = rng(seed);
    let n = g.random_range(1..=4);
    let d = g.random_range(1..=12);
    let k = g.random_range(1..=6);
    let x = uniform(&mut g, n * d, -1.0, 1.0);
    let wt = uniform(&mut g, d * k, -1.0, 1.0);
    let b = uniform(&mut g, k, -1.0, 1.0);
    let r = probe(&mut g, n * k);
    let grads = fully_connected_backward(&tensor(&[n, k], &r), &tensor(&[n, d], &x), &tensor(&[d, k], &wt)).unwrap();

    let (x64, w64, b64, r64) = (widen(&x), widen(&wt), widen(&b), widen(&r));
    let nx = central_diff(&x64, STEP, |v| dot(&linear(v, n, d, &w64, k, &b64), &r64));
    let nw = central_diff(&w64, STEP, |v| dot(&linear(&x64, n, d, v, k, &b64), &r64));
    let nb = central_diff(&b64, STEP, |v| dot(&linear(&x64, n, d, &w64, k, v), &r64));
    max_rel_err(grads.input.data(), &nx, FLOOR)
        .max(max_rel_err(grads.weights.data(), &nw, FLOOR))
        .max(max_rel_err(grads.bias.data(), &nb, FLOOR))
}

pub fn pool(seed: u64) -> f64 {
    let mut g = rng(seed);
    let n = g.random_range(1..=2);
    let c = g.random_range(1..=3);
    let h = g.random_range(2..=7);
    let w = g.random_range(2..=7);
    let win = g.random_range(1..=3usize).min(h).min(w);
    let stride = g.random_range(1..=2);
    let xs = [n, c, h, w];
    // Distinct values spaced well beyond the step, so no window ties or kinks.
    let len = n * c * h * w;
    let mut x: Vec<f32> = (0..len).map(|i| i as f32 * 0.05).collect();
    x.shuffle(&mut g);
    let out = maxpool2d(&tensor(&xs, &x), win, stride).unwrap();
    let r = probe(&mut g, out.output.len());
    let analytic = maxpool2d_backward(&tensor(out.output.shape(), &r), &out.argmax, &xs).unwrap();
    let r64 = widen(&r);
    let nx = central_diff(&widen(&x), STEP, |v| dot(&maxpool(v, xs, win, stride).0, &r64));
    max_rel_err(analytic.data(), &nx, FLOOR)
}

pub fn relu(seed: u64) -> f64 {
    let mut g = rng(seed);
    let len = g.random_range(1..=64);
    // Keep inputs away from the kink at zero.
    let x: Vec<f32> = (0..len)
        .map(|_| {
            let v: f32 = g.random_range(0.01..1.0);
            if g.random_bool(0.5) { v } else { -v }
        })
        .collect();
    let r = probe(&mut g, len);
    let analytic = relu_backward(&tensor(&[len], &r), &tensor(&[len], &x)).unwrap();
    let r64 = widen(&r);
    let nx = central_diff(&widen(&x), STEP, |v| dot(&super::relu(v), &r64));
    max_rel_err(analytic.data(), &nx, FLOOR)
}

pub fn dropout(seed: u64) -> f64 {
    let mut g = rng(seed);
    let len = g.random_range(1..=64);
    let keep_prob = [0.5f32, 0.8, 0.9][g.random_range(0..3)];
    let keep: Vec<bool> = (0..len).map(|_| g.random_bool(keep_prob as f64)).collect();
    let mask = DropoutMask::from_keep(&keep, keep_prob).unwrap();
    let x = uniform(&mut g, len, -1.0, 1.0);
    let r = probe(&mut g, len);
    let analytic = mask.backward(&tensor(&[len], &r)).unwrap();
    let r64 = widen(&r);
    let nx = central_diff(&widen(&x), STEP, |v| dot(&super::dropout(v, &keep, keep_prob as f64), &r64));
    max_rel_err(analytic.data(), &nx, FLOOR)
}

pub fn softmax_cross_entropy_logits(seed: u64) -> f64 {
    let mut g = rng(seed);
    let n = g.random_range(1..=4);
    let k = g.random_range(2..=10);
    let logits = uniform(&mut g, n * k, -3.0, 3.0);
    let labels: Vec<usize> = (0..n).map(|_| g.random_range(0..k)).collect();
    let (_, analytic) = softmax_cross_entropy(&tensor(&[n, k], &logits), &labels).unwrap();
    let nx = central_diff(&widen(&logits), STEP, |v| softmax_ce(v, k, &labels));
    max_rel_err(analytic.data(), &nx, FLOOR)
}

/// Worst error over all instances of one layer kind.
pub fn worst(check: fn(u64) -> f64) -> f64 {
    (0..INSTANCES).map(check).fold(0.0, f64::max)
}
