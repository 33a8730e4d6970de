use std::collections::BTreeSet;

mod common;

use common::brute_olo_cost as brute_olo;
use proptest::prelude::*;
use scenclust_core::proximity::DissimilarityMatrix;
use scenclust_core::seriation::*;

fn euclidean(points: &[(f64, f64)]) -> DissimilarityMatrix {
    DissimilarityMatrix::from_fn(points.len(), |i, j| {
        let (a, b) = (points[i], points[j]);
        (a.0 - b.0).hypot(a.1 - b.1)
    })
}

fn arb_points(max: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 2..=max)
}

/// Textbook agglomeration: recompute every cluster distance from scratch.
fn naive(d: &DissimilarityMatrix, method: Linkage) -> Vec<(f64, BTreeSet<usize>)> {
    let mut clusters: Vec<BTreeSet<usize>> = (0..d.size()).map(|i| BTreeSet::from([i])).collect();
    let dist = |a: &BTreeSet<usize>, b: &BTreeSet<usize>| {
        let all: Vec<f64> = a
            .iter()
            .flat_map(|&i| b.iter().map(move |&j| d.get(i, j)))
            .collect();
        match method {
            Linkage::Single => all.iter().copied().fold(f64::INFINITY, f64::min),
            Linkage::Complete => all.iter().copied().fold(0.0, f64::max),
            Linkage::Average => all.iter().sum::<f64>() / all.len() as f64,
        }
    };
    let mut merges = Vec::new();
    while clusters.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for x in 0..clusters.len() {
            for y in x + 1..clusters.len() {
                let h = dist(&clusters[x], &clusters[y]);
                if h < best.0 {
                    best = (h, x, y);
                }
            }
        }
        let (h, x, y) = best;
        let b = clusters.remove(y);
        clusters[x].extend(b);
        merges.push((h, clusters[x].clone()));
    }
    merges
}

fn leaves_under(dendro: &Dendrogram, node: usize) -> BTreeSet<usize> {
    match dendro.children(node) {
        None => BTreeSet::from([node]),
        Some((l, r)) => {
            let mut s = leaves_under(dendro, l);
            s.extend(leaves_under(dendro, r));
            s
        }
    }
}

fn is_tree_order(dendro: &Dendrogram, order: &[usize]) -> bool {
    let mut pos = vec![0; order.len()];
    for (p, &leaf) in order.iter().enumerate() {
        pos[leaf] = p;
    }
    (dendro.n_leaves..=dendro.root()).all(|node| {
        let ps: Vec<usize> = leaves_under(dendro, node).iter().map(|&l| pos[l]).collect();
        let (lo, hi) = (*ps.iter().min().unwrap(), *ps.iter().max().unwrap());
        hi - lo + 1 == ps.len()
    })
}

fn partition(labels: &[usize]) -> BTreeSet<BTreeSet<usize>> {
    let mut groups = std::collections::BTreeMap::<usize, BTreeSet<usize>>::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().insert(i);
    }
    groups.into_values().collect()
}

fn arb_linkage() -> impl Strategy<Value = Linkage> {
    prop_oneof![
        Just(Linkage::Average),
        Just(Linkage::Single),
        Just(Linkage::Complete)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn linkage_matches_naive_agglomeration(points in arb_points(32), method in arb_linkage()) {
        let d = euclidean(&points);
        let dendro = linkage(&d, method).unwrap();
        dendro.validate().unwrap();
        let want = naive(&d, method);
        prop_assert_eq!(dendro.merges.len(), want.len());
        for (k, (m, (h, members))) in dendro.merges.iter().zip(&want).enumerate() {
            prop_assert!((m.height - h).abs() < 1e-9, "merge {}: {} vs {}", k, m.height, h);
            prop_assert_eq!(m.size, members.len());
        }
        // without near-ties the clusters themselves must agree too
        let heights: Vec<f64> = want.iter().map(|w| w.0).collect();
        let mut sorted = heights.clone();
        sorted.sort_by(f64::total_cmp);
        let well_separated = sorted.windows(2).all(|w| w[1] - w[0] > 1e-9);
        if well_separated {
            let got: BTreeSet<_> = (dendro.n_leaves..=dendro.root()).map(|n| leaves_under(&dendro, n)).collect();
            let expected: BTreeSet<_> = want.into_iter().map(|w| w.1).collect();
            prop_assert_eq!(got, expected);
        }
    }

    #[test]
    fn olo_reaches_the_brute_force_minimum(points in arb_points(10), method in arb_linkage()) {
        let d = euclidean(&points);
        let dendro = linkage(&d, method).unwrap();
        let hc = hc_order(&dendro);
        let olo = olo_order(&dendro, &d);
        let best = brute_olo(&dendro, &d);
        prop_assert!(is_tree_order(&dendro, &hc));
        prop_assert!(is_tree_order(&dendro, &olo));
        prop_assert!((order_cost(&d, &olo) - best).abs() < 1e-9);
        prop_assert!(order_cost(&d, &olo) <= order_cost(&d, &hc) + 1e-12);
    }

    #[test]
    fn flat_clusters_ignore_input_order(points in arb_points(24), k in 1usize..6, rot in any::<prop::sample::Index>()) {
        let n = points.len();
        prop_assume!(k <= n);
        let shift = rot.index(n);
        let moved: Vec<_> = (0..n).map(|i| points[(i + shift) % n]).collect();
        let a = linkage(&euclidean(&points), Linkage::Average).unwrap();
        let b = linkage(&euclidean(&moved), Linkage::Average).unwrap();
        let heights = |dd: &Dendrogram| dd.merges.iter().map(|m| m.height).collect::<Vec<_>>();
        let ha = heights(&a);
        // a tie at the cut makes the partition legitimately order dependent
        let cut = n - k;
        prop_assume!(cut == 0 || cut == n - 1 || (ha[cut] - ha[cut - 1]).abs() > 1e-9);
        for (x, y) in ha.iter().zip(heights(&b)) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        let la = flat_clusters(&a, k).unwrap();
        let lb = flat_clusters(&b, k).unwrap();
        let back: Vec<usize> = (0..n).map(|i| lb[(i + n - shift) % n]).collect();
        prop_assert_eq!(partition(&la), partition(&back));
        prop_assert_eq!(partition(&la).len(), k);
    }
}

#[test]
fn cluster_runs_cover_the_order() {
    let d = euclidean(&[(0.0, 0.0), (10.0, 0.0), (0.1, 0.0), (10.2, 0.0), (0.3, 0.0)]);
    let dendro = linkage(&d, Linkage::Average).unwrap();
    let order = hc_order(&dendro);
    let labels = flat_clusters(&dendro, 2).unwrap();
    let runs = cluster_runs(&labels, &order);
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[0].1, 0);
    assert_eq!(runs[1].2, 5);
    assert_eq!(runs[0].2 - runs[0].1 + runs[1].2 - runs[1].1, 5);
}
