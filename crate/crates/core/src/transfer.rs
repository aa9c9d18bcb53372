//! Extraction of first-layer filter banks and their injection into disjoint
//! slots of a wider first layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{bias_name, ModelGraph};
use crate::tensor::Tensor;
use crate::zoo::tower_first_layer_name;

pub const FIRST_LAYER: &str = "conv1";

/// Weights and biases of one convolution layer, lifted out of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    /// `[F, C, fh, fw]`
    pub weights: Tensor,
    /// `[F]`
    pub bias: Tensor,
    pub source_id: String,
}

impl FilterBank {
    pub fn new(weights: Tensor, bias: Tensor, source_id: impl Into<String>) -> Result<Self> {
        if weights.rank() != 4 || bias.shape() != [weights.dim(0)] {
            return Err(Error::config(format!(
                "filter bank weights {:?} and bias {:?} disagree",
                weights.shape(),
                bias.shape()
            )));
        }
        Ok(Self { weights, bias, source_id: source_id.into() })
    }

    pub fn filters(&self) -> usize {
        self.weights.dim(0)
    }
}

/// A contiguous run of filter indices `[start, end)` fed by source `source`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub start: usize,
    pub end: usize,
    pub source: usize,
}

impl Slot {
    pub fn width(&self) -> usize {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub target_layer: String,
    pub slots: Vec<Slot>,
    pub m: usize,
}

impl PartitionPlan {
    pub fn total_filters(&self) -> usize {
        self.slots.last().map_or(0, |s| s.end)
    }

    pub fn slot_width(&self) -> usize {
        self.slots.first().map_or(0, Slot::width)
    }
}

/// Splits `filters` into `m` equal contiguous slots; slot `j` is fed by source `j`.
pub fn make_partition_plan(filters: usize, m: usize) -> Result<PartitionPlan> {
    plan_for_layer(FIRST_LAYER, filters, m)
}

fn plan_for_layer(target: &str, filters: usize, m: usize) -> Result<PartitionPlan> {
    if m == 0 || filters == 0 || !filters.is_multiple_of(m) {
        return Err(Error::config(format!(
            "{m} shallow sources cannot evenly divide {filters} first-layer filters"
        )));
    }
    let width = filters / m;
    Ok(PartitionPlan {
        target_layer: target.to_string(),
        slots: (0..m)
            .map(|j| Slot { start: j * width, end: (j + 1) * width, source: j })
            .collect(),
        m,
    })
}

/// Deep copy of the named convolution layer.
pub fn extract_layer(model: &ModelGraph, layer: &str, source_id: impl Into<String>) -> Result<FilterBank> {
    if model.conv_spec(layer).is_none() {
        return Err(Error::Structure(format!(
            "model {} has no convolution layer named {layer}",
            model.arch
        )));
    }
    let weights = model.params.get(layer);
    let bias = model.params.get(&bias_name(layer));
    match (weights, bias) {
        (Some(w), Some(b)) => FilterBank::new(w.clone(), b.clone(), source_id),
        _ => Err(Error::Structure(format!("parameters of layer {layer} are missing"))),
    }
}

pub fn extract_first_layer(model: &ModelGraph, source_id: impl Into<String>) -> Result<FilterBank> {
    extract_layer(model, FIRST_LAYER, source_id)
}

/// Copies bank `j` into slot `j` of the plan's target layer, weights and
/// biases alike. Every other parameter is left as it was.
pub fn inject(cloud: &ModelGraph, banks: &[FilterBank], plan: &PartitionPlan) -> Result<ModelGraph> {
    let target = &plan.target_layer;
    let spec = cloud.conv_spec(target).ok_or_else(|| {
        Error::Structure(format!("cloud model has no convolution layer named {target}"))
    })?;
    if banks.len() != plan.m || plan.slots.len() != plan.m {
        return Err(Error::config(format!(
            "plan expects {} filter banks, got {}",
            plan.m,
            banks.len()
        )));
    }
    if plan.total_filters() != spec.out_channels {
        return Err(Error::config(format!(
            "plan covers {} filters but {target} has {}",
            plan.total_filters(),
            spec.out_channels
        )));
    }
    let row = spec.fan_in();
    let mut weights = cloud.params[target].clone();
    let mut bias = cloud.params[&bias_name(target)].clone();
    for (j, slot) in plan.slots.iter().enumerate() {
        let bank = &banks[slot.source];
        let expected = [slot.width(), spec.in_channels, spec.filter_h, spec.filter_w];
        if bank.weights.shape() != expected || bank.bias.len() != slot.width() {
            return Err(Error::config(format!(
                "slot {j} [{}, {}) of {target} needs a bank of shape {expected:?}; \
                 bank {} ({}) has shape {:?}",
                slot.start,
                slot.end,
                slot.source,
                bank.source_id,
                bank.weights.shape()
            )));
        }
        weights.data_mut()[slot.start * row..slot.end * row].copy_from_slice(bank.weights.data());
        bias.data_mut()[slot.start..slot.end].copy_from_slice(bank.bias.data());
    }
    let mut out = cloud.clone();
    out.params.insert(target.clone(), weights);
    out.params.insert(bias_name(target), bias);
    Ok(out)
}

/// One partition plan per tower of a split first layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerPlan {
    pub towers: Vec<PartitionPlan>,
}

/// Plans for a first layer split into `towers` towers of `per_tower_filters`
/// each, every tower divided among `m_per_tower` shallow sources.
pub fn make_tower_plan(towers: usize, per_tower_filters: usize, m_per_tower: usize) -> Result<TowerPlan> {
    if towers == 0 {
        return Err(Error::config("a tower plan needs at least one tower"));
    }
    Ok(TowerPlan {
        towers: (0..towers)
            .map(|t| plan_for_layer(&tower_first_layer_name(t), per_tower_filters, m_per_tower))
            .collect::<Result<_>>()?,
    })
}

/// `shallow_banks[j][t]` is tower `t`'s first layer of shallow model `j`;
/// it lands in slot `j` of the cloud's tower `t`.
pub fn inject_towers(cloud: &ModelGraph, shallow_banks: &[Vec<FilterBank>], plan: &TowerPlan) -> Result<ModelGraph> {
    let mut out = cloud.clone();
    for (t, tower_plan) in plan.towers.iter().enumerate() {
        let banks = shallow_banks
            .iter()
            .enumerate()
            .map(|(j, b)| {
                b.get(t).cloned().ok_or_else(|| {
                    Error::config(format!("shallow model {j} has no bank for tower {}", t + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out = inject(&out, &banks, tower_plan)?;
    }
    Ok(out)
}

/// Banks of every tower's first layer of a split-tower model, in tower order.
pub fn extract_tower_banks(model: &ModelGraph, towers: usize, source_id: &str) -> Result<Vec<FilterBank>> {
    (0..towers)
        .map(|t| extract_layer(model, &tower_first_layer_name(t), format!("{source_id}/tower{}", t + 1)))
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::zoo::{build_alexnet_stem, build_cloud_cifar, build_shallow_cifar, build_shallow_tower, init_random};

    #[test]
    fn plan_widths() {
        let plan = make_partition_plan(32, 4).unwrap();
        let ranges: Vec<_> = plan.slots.iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(ranges, [(0, 8), (8, 16), (16, 24), (24, 32)]);
        assert_eq!(make_partition_plan(32, 1).unwrap().slots, [Slot { start: 0, end: 32, source: 0 }]);
        let p16 = make_partition_plan(32, 16).unwrap();
        assert_eq!(p16.slots.len(), 16);
        assert!(p16.slots.iter().all(|s| s.width() == 2));
    }

    #[test]
    fn plan_rejects_uneven_split() {
        let err = make_partition_plan(32, 5).unwrap_err().to_string();
        assert!(err.contains("5") && err.contains("32"), "{err}");
        assert!(make_partition_plan(32, 0).is_err());
    }

    #[test]
    fn extraction_copies() {
        let mut shallow = init_random(build_shallow_cifar(8).unwrap(), &mut ChaCha8Rng::seed_from_u64(1));
        let bank = extract_first_layer(&shallow, "s0").unwrap();
        assert_eq!(bank.weights.shape(), &[8, 3, 3, 3]);
        let before = bank.clone();
        shallow.params.get_mut("conv1").unwrap().data_mut()[0] += 1.0;
        assert_eq!(bank, before);
    }

    #[test]
    fn missing_layer_is_structural() {
        let stem = build_alexnet_stem().unwrap();
        assert!(matches!(extract_first_layer(&stem, "x"), Err(Error::Structure(_))));
    }

    #[test]
    fn four_banks_fill_cloud_slots() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cloud = init_random(build_cloud_cifar().unwrap(), &mut rng);
        let banks: Vec<_> = (0..4)
            .map(|j| {
                let s = init_random(build_shallow_cifar(8).unwrap(), &mut rng);
                extract_first_layer(&s, format!("s{j}")).unwrap()
            })
            .collect();
        let plan = make_partition_plan(32, 4).unwrap();
        let out = inject(&cloud, &banks, &plan).unwrap();
        let w = &out.params["conv1"];
        for (j, bank) in banks.iter().enumerate() {
            assert_eq!(w.slice_outer(8 * j, 8 * j + 8).unwrap(), bank.weights);
            assert_eq!(&out.params["conv1.bias"].data()[8 * j..8 * j + 8], bank.bias.data());
        }
        for (name, t) in &cloud.params {
            if name != "conv1" && name != "conv1.bias" {
                assert!(t.bitwise_eq(&out.params[name]), "{name} changed");
            }
        }
    }

    #[test]
    fn single_bank_replaces_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cloud = init_random(build_cloud_cifar().unwrap(), &mut rng);
        let donor = init_random(build_cloud_cifar().unwrap(), &mut rng);
        let bank = extract_first_layer(&donor, "donor").unwrap();
        let out = inject(&cloud, &[bank], &make_partition_plan(32, 1).unwrap()).unwrap();
        assert!(out.params["conv1"].bitwise_eq(&donor.params["conv1"]));
    }

    #[test]
    fn wrong_bank_width_names_slot_and_bank() {
        let cloud = build_cloud_cifar().unwrap();
        let bank = extract_first_layer(&build_shallow_cifar(12).unwrap(), "wide").unwrap();
        let plan = make_partition_plan(32, 4).unwrap();
        let banks = vec![bank; 4];
        let err = inject(&cloud, &banks, &plan).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let msg = err.to_string();
        assert!(msg.contains("slot 0") && msg.contains("wide"), "{msg}");
        assert!(inject(&cloud, &banks[..3], &plan).is_err());
    }

    #[test]
    fn tower_plan_routes_halves() {
        let plan = make_tower_plan(2, 48, 4).unwrap();
        assert_eq!(plan.towers.len(), 2);
        for (t, p) in plan.towers.iter().enumerate() {
            assert_eq!(p.target_layer, tower_first_layer_name(t));
            assert_eq!(p.slots.len(), 4);
            assert!(p.slots.iter().all(|s| s.width() == 12));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let stem = build_alexnet_stem().unwrap();
        let shallow: Vec<Vec<FilterBank>> = (0..4)
            .map(|j| {
                let s = init_random(build_shallow_tower(11, 12).unwrap(), &mut rng);
                extract_tower_banks(&s, 2, &format!("s{j}")).unwrap()
            })
            .collect();
        let out = inject_towers(&stem, &shallow, &plan).unwrap();
        for (j, banks) in shallow.iter().enumerate() {
            for (t, bank) in banks.iter().enumerate() {
                let w = &out.params[&tower_first_layer_name(t)];
                assert_eq!(w.slice_outer(12 * j, 12 * j + 12).unwrap(), bank.weights);
            }
        }

        let narrow: Vec<Vec<FilterBank>> = (0..4)
            .map(|j| extract_tower_banks(&build_shallow_tower(11, 10).unwrap(), 2, &format!("n{j}")).unwrap())
            .collect();
        assert!(inject_towers(&stem, &narrow, &plan).is_err());
    }
}
