mod common;

use htcnn_core::data::stratified_split_indices;
use htcnn_core::kernels::{dropout, softmax_cross_entropy};
use htcnn_core::metrics::{aag, bp, pbp, PairedCurves};
use htcnn_core::transfer::make_partition_plan;
use htcnn_core::Tensor;
use proptest::prelude::*;

fn accuracies(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0u32..=1000).prop_map(|v| v as f64 / 1000.0), len)
}

fn curve_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..40).prop_flat_map(|n| (accuracies(n), accuracies(n)))
}

proptest! {
    #[test]
    fn partition_slots_tile_the_layer(m in 1usize..=32, width in 1usize..=8) {
        let filters = m * width;
        let plan = make_partition_plan(filters, m).unwrap();
        prop_assert_eq!(plan.slots.len(), m);
        let mut next = 0;
        for (j, slot) in plan.slots.iter().enumerate() {
            prop_assert_eq!(slot.start, next);
            prop_assert_eq!(slot.width(), width);
            prop_assert_eq!(slot.source, j);
            next = slot.end;
        }
        prop_assert_eq!(next, filters);
    }

    #[test]
    fn partition_rejects_non_divisors(filters in 2usize..=64, m in 2usize..=64) {
        prop_assume!(filters % m != 0);
        prop_assert!(make_partition_plan(filters, m).is_err());
    }

    #[test]
    fn split_is_a_balanced_partition(
        labels in prop::collection::vec(0u8..10, 10..400),
        k in 1usize..=6,
        seed in any::<u64>(),
    ) {
        prop_assume!(labels.len() >= k);
        let parts = stratified_split_indices(&labels, k, seed).unwrap();
        prop_assert_eq!(parts.len(), k);
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for class in 0..10u8 {
            let counts: Vec<usize> =
                parts.iter().map(|p| p.iter().filter(|&&i| labels[i] == class).count()).collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            prop_assert!(hi - lo <= 1, "class {} counts {:?}", class, counts);
        }
        let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "sizes {:?}", sizes);
        prop_assert_eq!(&parts, &stratified_split_indices(&labels, k, seed).unwrap());
    }

    #[test]
    fn aag_is_antisymmetric((ht, cc) in curve_pair()) {
        let p = PairedCurves::from_accuracies(&ht, &cc).unwrap();
        prop_assert!((aag(&p).unwrap() + aag(&p.swapped()).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn pbp_of_both_orders_plus_ties_is_one((ht, cc) in curve_pair()) {
        let p = PairedCurves::from_accuracies(&ht, &cc).unwrap();
        let ties = ht.iter().zip(&cc).filter(|(a, b)| a == b).count() as f64 / ht.len() as f64;
        let total = pbp(&p).unwrap() + pbp(&p.swapped()).unwrap() + ties;
        prop_assert!((total - 1.0).abs() < 1e-12);
        for (a, b) in ht.iter().zip(&cc) {
            prop_assert!(bp(*a, *b) + bp(*b, *a) <= 1);
        }
    }

    #[test]
    fn softmax_loss_is_shift_invariant(
        logits in prop::collection::vec(-5.0f32..5.0, 10),
        label in 0usize..10,
        shift in -20.0f32..20.0,
    ) {
        let base = Tensor::new(vec![1, 10], logits.clone()).unwrap();
        let moved = Tensor::new(vec![1, 10], logits.iter().map(|v| v + shift).collect()).unwrap();
        let (l0, g0) = softmax_cross_entropy(&base, &[label]).unwrap();
        let (l1, g1) = softmax_cross_entropy(&moved, &[label]).unwrap();
        prop_assert!((l0 - l1).abs() < 1e-4, "{} vs {}", l0, l1);
        for (a, b) in g0.data().iter().zip(g1.data()) {
            prop_assert!((a - b).abs() < 1e-5);
        }
        prop_assert!(g0.data().iter().sum::<f32>().abs() < 1e-5);
    }
}

#[test]
fn inverted_dropout_preserves_expectation() {
    let mut g = common::rng(1);
    let input = Tensor::full(vec![200_000], 1.0);
    for keep in [0.5f32, 0.8] {
        let (out, mask) = dropout(&input, keep, &mut g, true).unwrap();
        assert!(mask.is_some());
        let mean = out.data().iter().map(|&v| v as f64).sum::<f64>() / out.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "keep {keep}: mean {mean}");
        let kept = out.data().iter().filter(|&&v| v != 0.0).count() as f64 / out.len() as f64;
        assert!((kept - keep as f64).abs() < 0.01);
    }
}

#[test]
fn dropout_is_identity_at_inference() {
    let mut g = common::rng(2);
    let input = Tensor::from_fn(vec![4, 5], |i| i as f32);
    let (out, mask) = dropout(&input, 0.5, &mut g, false).unwrap();
    assert!(mask.is_none());
    assert!(out.bitwise_eq(&input));
}
