//! Dense row-major `f32` tensors.

use std::fmt;

use crate::error::{Error, Result};

/// Dense N-dimensional array of `f32` stored in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(Error::config(format!(
                "tensor shape {shape:?} has a zero dimension"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::config(format!(
                "tensor shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f32) -> Self {
        let shape = shape.into();
        assert!(shape.iter().all(|&d| d > 0), "zero dimension in {shape:?}");
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f32) -> Self {
        let shape = shape.into();
        assert!(shape.iter().all(|&d| d > 0), "zero dimension in {shape:?}");
        let len: usize = shape.iter().product();
        Self {
            data: (0..len).map(&mut f).collect(),
            shape,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of dimension `axis`. Panics if the axis does not exist.
    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Elements `[start, end)` along axis 0, as a new tensor.
    pub fn slice_outer(&self, start: usize, end: usize) -> Result<Self> {
        let outer = self.shape[0];
        if start >= end || end > outer {
            return Err(Error::config(format!(
                "outer slice [{start}, {end}) out of range for dimension {outer}"
            )));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Self {
            shape,
            data: self.data[start * inner..end * inner].to_vec(),
        })
    }

    /// Gather rows along axis 0 in the given order.
    pub fn gather_outer(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::config("cannot gather zero rows"));
        }
        let inner: usize = self.shape[1..].iter().product();
        let outer = self.shape[0];
        let mut data = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            if i >= outer {
                return Err(Error::config(format!(
                    "row index {i} out of range for dimension {outer}"
                )));
            }
            data.extend_from_slice(&self.data[i * inner..(i + 1) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(Self { shape, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Position of the first non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Bitwise comparison, treating two NaNs with equal payload as equal.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= PREVIEW {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..PREVIEW])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new([2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new([2, 3], vec![0.0; 5]),
            Err(Error::Config(_))
        ));
        assert!(Tensor::new([0, 3], vec![]).is_err());
    }

    #[test]
    fn gather_and_slice_rows() {
        let t = Tensor::from_fn([3, 2], |i| i as f32);
        let g = t.gather_outer(&[2, 0]).unwrap();
        assert_eq!(g.data(), &[4.0, 5.0, 0.0, 1.0]);
        let s = t.slice_outer(1, 3).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.data(), &[2.0, 3.0, 4.0, 5.0]);
        assert!(t.gather_outer(&[3]).is_err());
    }
}
