//! The CIFAR-10 binary layout: records of one label byte followed by 3072
//! pixel bytes (three 32×32 planes, red then green then blue, row-major).

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RECORD_BYTES: usize = 1 + 3 * 32 * 32;
pub const RECORDS_PER_FILE: usize = 10_000;
pub const BATCH_FILE_BYTES: usize = RECORD_BYTES * RECORDS_PER_FILE;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

fn read_exact_file(path: &Path, expected: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| {
        Error::data(format!(
            "cannot read CIFAR-10 file {} (expected {expected} bytes): {e}",
            path.display()
        ))
    })?;
    if bytes.len() != expected {
        return Err(Error::data(format!(
            "CIFAR-10 file {} has {} bytes, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes)
}

fn decode(bytes: &[u8], name: String) -> Result<Dataset> {
    let n = bytes.len() / RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (RECORD_BYTES - 1));
    for record in bytes.chunks_exact(RECORD_BYTES) {
        labels.push(record[0]);
        pixels.extend(record[1..].iter().map(|&b| b as f32 / 255.0));
    }
    let images = Tensor::new([n, 3, 32, 32], pixels)?;
    Dataset::new(images, labels, name)
}

/// Reads any file made of whole CIFAR-10 records.
pub fn read_cifar_records(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    if bytes.is_empty() || bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::data(format!(
            "{} has {} bytes, not a positive multiple of the {RECORD_BYTES}-byte record",
            path.display(),
            bytes.len()
        )));
    }
    decode(&bytes, path.display().to_string())
}

/// Writes a dataset back out in the binary record layout. Pixels are
/// re-quantised as `round(255·x)`, so only `[0, 1]` images round-trip.
pub fn write_cifar_records(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(dataset.len() * RECORD_BYTES);
    for (label, pixels) in dataset.labels.iter().zip(dataset.images.data().chunks_exact(RECORD_BYTES - 1)) {
        bytes.push(*label);
        bytes.extend(pixels.iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads the five training batches and the test batch from `dir`, scaling
/// pixels to `[0, 1]`. Any missing or mis-sized file fails the whole load.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let mut train_bytes = Vec::with_capacity(BATCH_FILE_BYTES * TRAIN_FILES.len());
    for file in TRAIN_FILES {
        train_bytes.extend(read_exact_file(&dir.join(file), BATCH_FILE_BYTES)?);
    }
    let test_bytes = read_exact_file(&dir.join(TEST_FILE), BATCH_FILE_BYTES)?;
    let train = decode(&train_bytes, "cifar10-train".into())?;
    drop(train_bytes);
    let test = decode(&test_bytes, "cifar10-test".into())?;
    Ok((train, test))
}
