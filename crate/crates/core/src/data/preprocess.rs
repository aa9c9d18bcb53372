use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Subtracts the per-pixel mean of `train` from both datasets and returns
/// that mean image `[3, 32, 32]`.
pub fn preprocess_mean_subtract(mut train: Dataset, mut test: Dataset) -> Result<(Dataset, Dataset, Tensor)> {
    if train.is_empty() {
        return Err(Error::data("cannot compute a mean image over an empty training set"));
    }
    let pixels = train.images.len() / train.len();
    let mut sums = vec![0.0f64; pixels];
    for image in train.images.data().chunks_exact(pixels) {
        sums.iter_mut().zip(image).for_each(|(s, &v)| *s += v as f64);
    }
    let n = train.len() as f64;
    let mean: Vec<f32> = sums.iter().map(|s| (s / n) as f32).collect();
    for ds in [&mut train, &mut test] {
        for image in ds.images.data_mut().chunks_exact_mut(pixels) {
            image.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
        }
    }
    let mean_image = Tensor::new(&train.images.shape()[1..], mean)?;
    Ok((train, test, mean_image))
}
