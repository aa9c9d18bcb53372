use super::expect_rank;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over a batch and its gradient with respect to
/// the logits, `(softmax - onehot) / N`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    expect_rank(logits, 2, "logits")?;
    let (n, k) = (logits.dim(0), logits.dim(1));
    if labels.len() != n {
        return Err(Error::data(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(pos) = logits.first_non_finite() {
        return Err(Error::Numeric(format!(
            "non-finite logit at row {}, column {}",
            pos / k,
            pos % k
        )));
    }
    let inv_n = 1.0 / n as f32;
    let mut grad = vec![0.0f32; n * k];
    let mut total = 0.0f32;
    for ((row, g), &label) in logits.data().chunks_exact(k).zip(grad.chunks_exact_mut(k)).zip(labels) {
        if label >= k {
            return Err(Error::data(format!("label {label} out of range for {k} classes")));
        }
        let (arg, max) = row
            .iter()
            .copied()
            .enumerate()
            .fold((0, f32::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
        // Sum of exp over the non-maximal entries; the maximal one contributes exactly 1.
        let mut rest = 0.0f32;
        for (j, (gv, &v)) in g.iter_mut().zip(row).enumerate() {
            let e = if j == arg { 1.0 } else { (v - max).exp() };
            *gv = e;
            if j != arg {
                rest += e;
            }
        }
        let log_sum = rest.ln_1p();
        total += log_sum - (row[label] - max);
        let scale = inv_n / (1.0 + rest);
        g.iter_mut().for_each(|v| *v *= scale);
        g[label] -= inv_n;
    }
    Ok((total * inv_n, Tensor::new([n, k], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Tensor::full([3, 10], 0.25);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((loss - 10f32.ln()).abs() < 1e-6, "{loss}");
    }

    #[test]
    fn confident_correct_logit() {
        let logits = Tensor::new([1, 3], vec![10.0, 0.0, 0.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
        // ln(1 + 2e^-10) evaluated in f64
        let expected = (2.0f64 * (-10.0f64).exp()).ln_1p();
        assert!(((loss as f64) - expected).abs() < 1e-9, "{loss} vs {expected}");
    }

    #[test]
    fn uniform_two_class_gradient() {
        let logits = Tensor::zeros([2, 2]);
        let (_, g) = softmax_cross_entropy(&logits, &[0, 0]).unwrap();
        assert_eq!(g.data(), &[-0.25, 0.25, -0.25, 0.25]);
    }

    #[test]
    fn label_out_of_range_is_data_error() {
        let logits = Tensor::zeros([1, 3]);
        assert!(matches!(softmax_cross_entropy(&logits, &[3]), Err(Error::Data(_))));
    }

    #[test]
    fn nan_logits_are_numeric_failures() {
        let logits = Tensor::new([1, 2], vec![f32::NAN, 0.0]).unwrap();
        assert!(matches!(softmax_cross_entropy(&logits, &[0]), Err(Error::Numeric(_))));
    }
}
