use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-element scale factors of one inverted-dropout draw: `0` for dropped
/// entries, `1 / keep_prob` for survivors.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    scale: Vec<f32>,
}

impl DropoutMask {
    pub fn from_keep(keep: &[bool], keep_prob: f32) -> Result<Self> {
        check_keep_prob(keep_prob)?;
        let survivor = 1.0 / keep_prob;
        Ok(Self {
            scale: keep.iter().map(|&k| if k { survivor } else { 0.0 }).collect(),
        })
    }

    pub fn sample(len: usize, keep_prob: f32, rng: &mut impl Rng) -> Result<Self> {
        check_keep_prob(keep_prob)?;
        let survivor = 1.0 / keep_prob;
        Ok(Self {
            scale: (0..len)
                .map(|_| if rng.random::<f32>() < keep_prob { survivor } else { 0.0 })
                .collect(),
        })
    }

    pub fn apply(&self, input: &Tensor) -> Result<Tensor> {
        if input.len() != self.scale.len() {
            return Err(Error::config(format!(
                "dropout mask covers {} elements, tensor has {}",
                self.scale.len(),
                input.len()
            )));
        }
        let data = input.data().iter().zip(&self.scale).map(|(x, s)| x * s).collect();
        Tensor::new(input.shape(), data)
    }

    /// The map is linear, so the backward pass applies the same scales.
    pub fn backward(&self, upstream: &Tensor) -> Result<Tensor> {
        self.apply(upstream)
    }
}

fn check_keep_prob(keep_prob: f32) -> Result<()> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::config(format!(
            "dropout keep probability must lie in (0, 1], got {keep_prob}"
        )));
    }
    Ok(())
}

/// Inverted dropout. Returns the input unchanged (and draws nothing from
/// `rng`) when not training or when `keep_prob == 1`.
pub fn dropout(
    input: &Tensor,
    keep_prob: f32,
    rng: &mut impl Rng,
    training: bool,
) -> Result<(Tensor, Option<DropoutMask>)> {
    check_keep_prob(keep_prob)?;
    if !training || keep_prob == 1.0 {
        return Ok((input.clone(), None));
    }
    let mask = DropoutMask::sample(input.len(), keep_prob, rng)?;
    Ok((mask.apply(input)?, Some(mask)))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn identity_cases() {
        let x = Tensor::from_fn([2, 3], |i| i as f32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(dropout(&x, 1.0, &mut rng, true).unwrap().0, x);
        assert_eq!(dropout(&x, 0.5, &mut rng, false).unwrap().0, x);
    }

    #[test]
    fn fixed_mask_rescales_survivors() {
        let x = Tensor::new([2], vec![2.0, 4.0]).unwrap();
        let mask = DropoutMask::from_keep(&[true, false], 0.5).unwrap();
        assert_eq!(mask.apply(&x).unwrap().data(), &[4.0, 0.0]);
    }

    #[test]
    fn invalid_keep_probability() {
        let x = Tensor::zeros([2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(dropout(&x, 0.0, &mut rng, true), Err(Error::Config(_))));
        assert!(dropout(&x, -0.5, &mut rng, false).is_err());
        assert!(dropout(&x, 1.5, &mut rng, true).is_err());
    }

    #[test]
    fn same_rng_state_same_mask() {
        let x = Tensor::full([64], 1.0);
        let a = dropout(&x, 0.8, &mut ChaCha8Rng::seed_from_u64(9), true).unwrap().0;
        let b = dropout(&x, 0.8, &mut ChaCha8Rng::seed_from_u64(9), true).unwrap().0;
        assert!(a.bitwise_eq(&b));
    }
}
