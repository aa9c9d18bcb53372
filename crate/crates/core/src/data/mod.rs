//! Datasets: CIFAR-10 binary ingestion, a synthetic stand-in, stratified
//! splitting, mean subtraction and seeded mini-batching.

mod batch;
mod cifar;
mod preprocess;
mod split;
mod synthetic;

pub use batch::{minibatch_iter, MiniBatches};
pub use cifar::{
    load_cifar10, read_cifar_records, write_cifar_records, BATCH_FILE_BYTES, RECORDS_PER_FILE, RECORD_BYTES,
    TEST_FILE, TRAIN_FILES,
};
pub use preprocess::preprocess_mean_subtract;
pub use split::{stratified_split, stratified_split_indices, stratified_subset, SplitMode, SplitSpec};
pub use synthetic::{synthetic_blobs, SyntheticSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::zoo::{CIFAR_CLASSES, CIFAR_INPUT};

/// Labelled images `[N, 3, 32, 32]` with labels in `0..10`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<u8>,
    pub name: String,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<u8>, name: impl Into<String>) -> Result<Self> {
        if images.rank() != 4 || images.shape()[1..] != CIFAR_INPUT {
            return Err(Error::data(format!(
                "dataset images must be [N, 3, 32, 32], got {:?}",
                images.shape()
            )));
        }
        if labels.len() != images.dim(0) {
            return Err(Error::data(format!(
                "{} labels for {} images",
                labels.len(),
                images.dim(0)
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= CIFAR_CLASSES) {
            return Err(Error::data(format!("label {bad} outside 0..{CIFAR_CLASSES}")));
        }
        Ok(Self { images, labels, name: name.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> [usize; CIFAR_CLASSES] {
        let mut counts = [0; CIFAR_CLASSES];
        self.labels.iter().for_each(|&l| counts[l as usize] += 1);
        counts
    }

    /// Rows in the given order, as a new dataset.
    pub fn select(&self, indices: &[usize], name: impl Into<String>) -> Result<Self> {
        let images = self.images.gather_outer(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(images, labels, name)
    }

    /// Contiguous range of rows.
    pub fn take(&self, start: usize, end: usize) -> Result<Self> {
        Self::new(
            self.images.slice_outer(start, end)?,
            self.labels[start..end].to_vec(),
            self.name.clone(),
        )
    }
}
