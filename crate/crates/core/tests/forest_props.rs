mod common;

use common::{library_split as library_best, oracle_split as oracle_best, split_margin as margin};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenclust_core::dataset::{FeatureMatrix, FeatureSchema};
use scenclust_core::forest::*;

fn arb_points() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..=4).prop_flat_map(|q| {
        prop::collection::vec(
            prop::collection::vec(prop_oneof![-5.0..5.0f64, (-5i32..5).prop_map(f64::from)], q),
            2..=64,
        )
    })
}

fn matrix(rows: usize, q: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..rows * q)
        .map(|i| {
            let centre = if (i / q).is_multiple_of(3) { 4.0 } else { 0.0 };
            centre + rng.gen_range(-1.0..1.0)
        })
        .collect();
    FeatureMatrix::new(FeatureSchema::numeric(q), values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn best_split_matches_exhaustive_oracle(points in arb_points()) {
        let got = library_best(&points);
        let want = oracle_best(&points);
        match (got, want) {
            (None, None) => {}
            (Some(s), Some((dim, tau, gain))) => {
                prop_assert!((s.gain - gain).abs() < 1e-9, "{:?} vs {:?}", s, (dim, tau, gain));
                if margin(&points) > 1e-9 {
                    prop_assert_eq!(s.dim, dim);
                    prop_assert!((s.threshold - tau).abs() < 1e-12);
                }
            }
            (g, w) => prop_assert!(false, "library {:?}, oracle {:?}", g, w),
        }
    }

    #[test]
    fn split_is_affine_invariant(
        points in arb_points(),
        scale in prop::collection::vec(0.01..100.0f64, 4),
        shift in prop::collection::vec(-1e3..1e3f64, 4),
    ) {
        let moved: Vec<Vec<f64>> = points
            .iter()
            .map(|p| p.iter().enumerate().map(|(d, v)| v * scale[d] + shift[d]).collect())
            .collect();
        let (a, b) = (library_best(&points), library_best(&moved));
        prop_assert_eq!(a.is_some(), b.is_some());
        if let (Some(a), Some(b)) = (a, b) {
            prop_assert!((a.gain - b.gain).abs() < 1e-7);
            if margin(&points) > 1e-6 {
                prop_assert_eq!(a.dim, b.dim);
                let mapped = a.threshold * scale[a.dim] + shift[a.dim];
                prop_assert!((mapped - b.threshold).abs() < 1e-6 * (1.0 + mapped.abs()));
            }
        }
    }

    #[test]
    fn virtual_counts_balance(lo in -10.0..10.0f64, w in 0.1..10.0f64, t in 0.0..=1.0f64, n in 1usize..500) {
        let bbox = NodeBox { bounds: vec![(lo, lo + w)] };
        let (l, r) = virtual_child_counts(&bbox, 0, lo + t * w, n);
        prop_assert!(l >= 0.0 && r >= 0.0);
        prop_assert!((l + r - n as f64).abs() < 1e-9);
        prop_assert!((noise_density(&bbox, 0, n).unwrap() * w - n as f64).abs() < 1e-9);
    }
}

#[test]
fn trained_nodes_keep_balanced_noise() {
    let m = matrix(300, 3, 5);
    let config = ForestConfig {
        trees: 20,
        i_min: 0.2,
        seed: 9,
        ..Default::default()
    };
    let forest = train_forest(&m, &config).unwrap();
    for tree in &forest.trees {
        let root = tree.root();
        assert_eq!(root.real_count, 300);
        assert_eq!(root.virtual_count, 300.0);
        let mut leaves = 0;
        for node in &tree.nodes {
            assert!(
                (node.impurity - gini_impurity(node.real_count as f64, node.virtual_count)).abs()
                    < 1e-12
            );
            match node.kind {
                NodeKind::Internal { left, right, .. } => {
                    let (l, r) = (&tree.nodes[left as usize], &tree.nodes[right as usize]);
                    assert_eq!(l.real_count + r.real_count, node.real_count);
                    assert!(
                        (l.virtual_count + r.virtual_count - node.real_count as f64).abs() < 1e-9
                    );
                    assert!(node.impurity > config.i_min);
                }
                NodeKind::Leaf { label, .. } => {
                    leaves += 1;
                    let dense = node.real_count as f64 >= node.virtual_count;
                    assert_eq!(label == LeafLabel::A, dense);
                }
            }
        }
        assert_eq!(leaves, tree.n_leaves);
    }
}

/// Raising `i_min` can only stop growth earlier, so leaves merge and never split.
#[test]
fn higher_i_min_coarsens_every_tree() {
    let m = matrix(240, 4, 17);
    let grow = |i_min: f64| {
        train_forest(
            &m,
            &ForestConfig {
                trees: 15,
                i_min,
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap()
    };
    let levels = [0.1, 0.24, 0.29, 0.34, 0.45];
    let forests: Vec<_> = levels.iter().map(|&i| grow(i)).collect();
    for pair in forests.windows(2) {
        let (fine, coarse) = (&pair[0], &pair[1]);
        for b in 0..15 {
            let f = fine.leaf_assignments(b, &m).unwrap();
            let c = coarse.leaf_assignments(b, &m).unwrap();
            let mut map = std::collections::HashMap::new();
            for (x, y) in f.iter().zip(&c) {
                assert_eq!(
                    *map.entry(*x).or_insert(*y),
                    *y,
                    "fine leaf split across coarse leaves"
                );
            }
            assert!(coarse.trees[b].n_leaves <= fine.trees[b].n_leaves);
        }
    }
}

#[test]
fn training_is_deterministic_and_serializable() {
    let m = matrix(120, 3, 1);
    let config = ForestConfig {
        trees: 10,
        seed: 77,
        ..Default::default()
    };
    let a = train_forest(&m, &config).unwrap();
    let b = train_forest(&m, &config).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let back = ClusterForest::from_json(&a.to_json().unwrap()).unwrap();
    for t in 0..10 {
        assert_eq!(
            back.leaf_assignments(t, &m).unwrap(),
            a.leaf_assignments(t, &m).unwrap()
        );
    }
    let other = train_forest(&m, &ForestConfig { seed: 78, ..config }).unwrap();
    assert_ne!(other.to_json().unwrap(), a.to_json().unwrap());
}
