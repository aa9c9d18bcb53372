use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One pass over a dataset in a seeded random order. The trailing partial
/// batch is dropped.
#[derive(Debug)]
pub struct MiniBatches<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl MiniBatches<'_> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn batches_per_pass(&self) -> usize {
        self.order.len() / self.batch_size
    }
}

impl Iterator for MiniBatches<'_> {
    type Item = (Tensor, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        let end = self.next + self.batch_size;
        if end > self.order.len() {
            return None;
        }
        let idx = &self.order[self.next..end];
        self.next = end;
        let images = self.dataset.images.gather_outer(idx).expect("indices come from a permutation");
        let labels = idx.iter().map(|&i| self.dataset.labels[i] as usize).collect();
        Some((images, labels))
    }
}

/// Batches of pass `epoch`: the shuffle is drawn from stream `epoch` of a
/// ChaCha generator keyed by `seed`, so any pass can be reproduced alone.
pub fn minibatch_iter(dataset: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<MiniBatches<'_>> {
    if batch_size == 0 || batch_size > dataset.len() {
        return Err(Error::config(format!(
            "batch size {batch_size} must lie in 1..={}",
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    Ok(MiniBatches { dataset, order, batch_size, next: 0 })
}
