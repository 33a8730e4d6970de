#![allow(clippy::needless_range_loop)]

mod common;

use common::brute_proximity as brute_force;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenclust_core::dataset::{FeatureMatrix, FeatureSchema};
use scenclust_core::forest::{train_forest, ClusterForest, ForestConfig};
use scenclust_core::proximity::*;

fn matrix(rows: usize, q: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..rows * q)
        .map(|i| if (i / q).is_multiple_of(2) { 3.0 } else { 0.0 } + rng.gen_range(-1.0..1.0))
        .collect();
    FeatureMatrix::new(FeatureSchema::numeric(q), values).unwrap()
}

fn single_tree(forest: &ClusterForest, t: usize) -> ClusterForest {
    ClusterForest {
        config: forest.config.clone(),
        n_features: forest.n_features,
        trees: vec![forest.trees[t].clone()],
        bags: vec![forest.bags[t].clone()],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn counts_match_brute_force(
        rows in 2usize..60, q in 1usize..5, trees in 1usize..12, seed in any::<u64>(),
        i_min in 0.0..0.45f64, data_only in any::<bool>(),
    ) {
        let m = matrix(rows, q, seed);
        let forest = train_forest(&m, &ForestConfig { trees, i_min, seed, ..Default::default() }).unwrap();
        let rule = if data_only { CoLeafRule::DataLeavesOnly } else { CoLeafRule::AnyLeaf };
        let p = build_proximity(&forest, &m, rule).unwrap();
        let want = brute_force(&forest, &m, rule);
        let d = to_dissimilarity(&p);
        for i in 0..rows {
            prop_assert_eq!(p.get(i, i), 1.0);
            for j in 0..rows {
                prop_assert_eq!(p.count(i, j), want[i][j]);
                prop_assert_eq!(p.count(i, j), p.count(j, i));
                let v = p.get(i, j);
                prop_assert!((0.0..=1.0).contains(&v));
                if i != j {
                    prop_assert!((d.get(i, j) - (1.0 - v).sqrt()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn proximity_is_mean_of_single_trees(rows in 2usize..40, trees in 1usize..10, seed in any::<u64>()) {
        let m = matrix(rows, 3, seed);
        let forest = train_forest(&m, &ForestConfig { trees, seed, ..Default::default() }).unwrap();
        let whole = build_proximity(&forest, &m, CoLeafRule::AnyLeaf).unwrap();
        let parts: Vec<_> = (0..trees)
            .map(|t| build_proximity(&single_tree(&forest, t), &m, CoLeafRule::AnyLeaf).unwrap())
            .collect();
        for i in 0..rows {
            for j in 0..rows {
                let sum: u32 = parts.iter().map(|p| p.count(i, j)).sum();
                prop_assert_eq!(whole.count(i, j), sum);
                for p in &parts {
                    prop_assert!(p.get(i, j) == 0.0 || p.get(i, j) == 1.0);
                }
            }
        }
    }

    #[test]
    fn subset_and_permutation_agree_with_parent(rows in 3usize..40, seed in any::<u64>(), shuffle in any::<u64>()) {
        let m = matrix(rows, 2, seed);
        let forest = train_forest(&m, &ForestConfig { trees: 8, seed, ..Default::default() }).unwrap();
        let p = build_proximity(&forest, &m, CoLeafRule::AnyLeaf).unwrap();

        let mut order: Vec<usize> = (0..rows).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let perm = p.permuted(&order);
        let keep = &order[..rows / 2 + 1];
        let ids: Vec<u64> = keep.iter().map(|&i| p.row_ids()[i]).collect();
        let sub = p.subset(&ids).unwrap();
        for (a, &i) in order.iter().enumerate() {
            prop_assert_eq!(perm.row_ids()[a], p.row_ids()[i]);
            for (b, &j) in order.iter().enumerate() {
                prop_assert_eq!(perm.count(a, b), p.count(i, j));
            }
        }
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                prop_assert_eq!(sub.count(a, b), p.count(i, j));
            }
        }
    }
}

#[test]
fn data_leaf_rule_never_exceeds_any_leaf() {
    let m = matrix(80, 3, 4);
    let forest = train_forest(
        &m,
        &ForestConfig {
            trees: 30,
            i_min: 0.35,
            seed: 4,
            ..Default::default()
        },
    )
    .unwrap();
    let any = build_proximity(&forest, &m, CoLeafRule::AnyLeaf).unwrap();
    let data = build_proximity(&forest, &m, CoLeafRule::DataLeavesOnly).unwrap();
    for i in 0..80 {
        for j in 0..80 {
            assert!(data.count(i, j) <= any.count(i, j));
        }
    }
}

#[test]
fn binary_dump_round_trips_through_f32() {
    let m = matrix(25, 2, 8);
    let forest = train_forest(
        &m,
        &ForestConfig {
            trees: 7,
            seed: 8,
            ..Default::default()
        },
    )
    .unwrap();
    let p = build_proximity(&forest, &m, CoLeafRule::AnyLeaf).unwrap();
    let mut buf = Vec::new();
    p.write_f32(&mut buf).unwrap();
    assert_eq!(buf.len(), 25 * 25 * 4);
    let back = ProximityMatrix::read_f32(
        buf.as_slice(),
        7,
        p.row_ids().to_vec(),
        p.provenance.clone(),
    )
    .unwrap();
    assert_eq!(back, p);

    let d = to_dissimilarity(&p);
    let mut dbuf = Vec::new();
    d.write_f32(&mut dbuf).unwrap();
    let floats: Vec<f32> = dbuf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    for i in 0..25 {
        for j in 0..25 {
            assert!((f64::from(floats[i * 25 + j]) - d.get(i, j)).abs() < 1e-6);
        }
    }
}
