use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::zoo::CIFAR_CLASSES;

/// How training data is shared between the cloud and the shallow networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Every network trains on the whole training set.
    IdenticalData,
    /// Disjoint stratified subsets: subset 0 for the cloud, subset `j + 1`
    /// for shallow network `j`.
    DataLocality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub num_subsets: usize,
    pub seed: u64,
    pub mode: SplitMode,
}

fn shuffled_by_class(labels: &[u8], seed: u64) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); CIFAR_CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }
    by_class
}

/// Index lists of `k` disjoint subsets covering `0..labels.len()`.
///
/// Each class is shuffled and dealt round-robin, with the dealer position
/// carried across classes, so per-class counts differ by at most one
/// between subsets and so do subset sizes. Indices within a subset ascend.
pub fn stratified_split_indices(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::config("cannot split into zero subsets"));
    }
    let mut subsets = vec![Vec::with_capacity(labels.len() / k + 1); k];
    let mut dealer = 0;
    for members in shuffled_by_class(labels, seed) {
        for idx in members {
            subsets[dealer % k].push(idx);
            dealer += 1;
        }
    }
    for s in &mut subsets {
        s.sort_unstable();
    }
    Ok(subsets)
}

pub fn stratified_split(train: &Dataset, k: usize, seed: u64) -> Result<Vec<Dataset>> {
    stratified_split_indices(&train.labels, k, seed)?
        .iter()
        .enumerate()
        .map(|(j, idx)| train.select(idx, format!("{}-subset{}", train.name, j + 1)))
        .collect()
}

/// A class-proportional sample of `n` rows.
///
/// Members of each class are shuffled and ranked by quantile
/// `(i + 0.5) / count`; the `n` lowest quantiles across all classes win.
pub fn stratified_subset(dataset: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || n > dataset.len() {
        return Err(Error::config(format!(
            "cannot draw {n} rows from a dataset of {}",
            dataset.len()
        )));
    }
    let mut ranked: Vec<(f64, usize, usize)> = Vec::with_capacity(dataset.len());
    for (class, members) in shuffled_by_class(&dataset.labels, seed).into_iter().enumerate() {
        let count = members.len() as f64;
        ranked.extend(
            members
                .into_iter()
                .enumerate()
                .map(|(i, idx)| ((i as f64 + 0.5) / count, class, idx)),
        );
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = ranked[..n].iter().map(|r| r.2).collect();
    chosen.sort_unstable();
    dataset.select(&chosen, format!("{}-{n}", dataset.name))
}
