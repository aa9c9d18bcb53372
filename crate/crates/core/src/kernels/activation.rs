use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Masks `upstream` by `input > 0`; the subgradient at exactly zero is zero.
pub fn relu_backward(upstream: &Tensor, input: &Tensor) -> Result<Tensor> {
    if upstream.shape() != input.shape() {
        return Err(Error::config(format!(
            "relu backward: upstream shape {:?} differs from input shape {:?}",
            upstream.shape(),
            input.shape()
        )));
    }
    let data = upstream
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_negatives() {
        let x = Tensor::new([3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let pos = Tensor::new([2], vec![0.5, 3.0]).unwrap();
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn zero_input_gets_zero_gradient() {
        let x = Tensor::new([3], vec![-1.0, 0.0, 2.0]).unwrap();
        let g = Tensor::full([3], 1.0);
        assert_eq!(relu_backward(&g, &x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }
}
