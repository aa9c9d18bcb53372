//! Seeded Gaussian-blob images in the CIFAR-10 shape, for runs without the
//! real dataset.
//!
//! Each class owns a handful of coloured Gaussian blobs. A sample renders
//! its class blobs with jittered centres and amplitudes on a grey
//! background, adds class-independent distractor blobs, then per-pixel
//! Gaussian noise, and clamps to `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::zoo::CIFAR_CLASSES;

const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
    pub blobs_per_class: usize,
    pub distractors: usize,
    /// Standard deviation of blob-centre jitter, pixels.
    pub jitter: f32,
    /// Standard deviation of additive pixel noise.
    pub noise: f32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train_per_class: 500,
            test_per_class: 100,
            seed: 0,
            blobs_per_class: 3,
            distractors: 2,
            jitter: 2.0,
            noise: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    cx: f32,
    cy: f32,
    sigma: f32,
    color: [f32; 3],
}

impl Blob {
    fn random(rng: &mut impl Rng) -> Self {
        Self {
            cx: rng.random_range(4.0..28.0),
            cy: rng.random_range(4.0..28.0),
            sigma: rng.random_range(1.5..4.5),
            color: [
                rng.random_range(-0.45..0.45),
                rng.random_range(-0.45..0.45),
                rng.random_range(-0.45..0.45),
            ],
        }
    }

    fn render(&self, image: &mut [f32], amplitude: f32) {
        let inv = -0.5 / (self.sigma * self.sigma);
        for y in 0..SIDE {
            let dy = y as f32 - self.cy;
            for x in 0..SIDE {
                let dx = x as f32 - self.cx;
                let g = amplitude * ((dx * dx + dy * dy) * inv).exp();
                for (c, &col) in self.color.iter().enumerate() {
                    image[c * PLANE + y * SIDE + x] += col * g;
                }
            }
        }
    }
}

fn render_split(
    prototypes: &[Vec<Blob>],
    spec: &SyntheticSpec,
    per_class: usize,
    stream: u64,
    name: &str,
) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let jitter = Normal::new(0.0f32, spec.jitter).map_err(|e| Error::config(format!("jitter: {e}")))?;
    let noise = Normal::new(0.0f32, spec.noise).map_err(|e| Error::config(format!("noise: {e}")))?;
    let n = per_class * CIFAR_CLASSES;
    let mut pixels = vec![0.5f32; n * 3 * PLANE];
    let mut labels = Vec::with_capacity(n);
    for (i, image) in pixels.chunks_exact_mut(3 * PLANE).enumerate() {
        let class = i % CIFAR_CLASSES;
        labels.push(class as u8);
        for blob in &prototypes[class] {
            let moved = Blob {
                cx: blob.cx + jitter.sample(&mut rng),
                cy: blob.cy + jitter.sample(&mut rng),
                ..*blob
            };
            moved.render(image, rng.random_range(0.6..1.4));
        }
        for _ in 0..spec.distractors {
            Blob::random(&mut rng).render(image, 1.0);
        }
        for v in image.iter_mut() {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    Dataset::new(Tensor::new([n, 3, SIDE, SIDE], pixels)?, labels, name)
}

/// `(train, test)` with classes interleaved (`label = index mod 10`).
pub fn synthetic_blobs(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    if spec.train_per_class == 0 || spec.test_per_class == 0 {
        return Err(Error::config("synthetic dataset needs at least one image per class"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prototypes: Vec<Vec<Blob>> = (0..CIFAR_CLASSES)
        .map(|_| (0..spec.blobs_per_class).map(|_| Blob::random(&mut rng)).collect())
        .collect();
    let train = render_split(&prototypes, spec, spec.train_per_class, 1, "synthetic-train")?;
    let test = render_split(&prototypes, spec, spec.test_per_class, 2, "synthetic-test")?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_balance() {
        let spec = SyntheticSpec { train_per_class: 7, test_per_class: 3, ..Default::default() };
        let (train, test) = synthetic_blobs(&spec).unwrap();
        assert_eq!(train.images.shape(), &[70, 3, 32, 32]);
        assert_eq!(test.len(), 30);
        assert_eq!(train.class_counts(), [7; 10]);
        assert!(train.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn seeded() {
        let spec = SyntheticSpec { train_per_class: 2, test_per_class: 1, ..Default::default() };
        let a = synthetic_blobs(&spec).unwrap();
        assert_eq!(a, synthetic_blobs(&spec).unwrap());
        let other = SyntheticSpec { seed: 1, ..spec };
        assert_ne!(a.0.images, synthetic_blobs(&other).unwrap().0.images);
    }
}
