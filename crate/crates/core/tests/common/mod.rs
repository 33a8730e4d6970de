//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use scenclust_core::dataset::FeatureMatrix;
use scenclust_core::forest::{best_split, ClusterForest, LeafLabel, NodeBox, NodeView, Split};
use scenclust_core::proximity::{CoLeafRule, DissimilarityMatrix};
use scenclust_core::seriation::{order_cost, Dendrogram};

/// Every candidate split of a node, scored from first principles:
/// midpoints between distinct values, noise spread uniformly over the box.
pub fn split_candidates(points: &[Vec<f64>]) -> Vec<(usize, f64, f64)> {
    let n = points.len() as f64;
    let q = points[0].len();
    let mut out = Vec::new();
    for dim in 0..q {
        let mut col: Vec<f64> = points.iter().map(|p| p[dim]).collect();
        col.sort_by(f64::total_cmp);
        col.dedup();
        let (lo, hi) = (col[0], col[col.len() - 1]);
        for w in col.windows(2) {
            let tau = (w[0] + w[1]) / 2.0;
            let lr = points.iter().filter(|p| p[dim] <= tau).count() as f64;
            let lv = n * (tau - lo) / (hi - lo);
            let child = |r: f64, v: f64| {
                let t = r + v;
                if t == 0.0 {
                    return 0.0;
                }
                t * (1.0 - (r / t).powi(2) - (v / t).powi(2))
            };
            let weighted = (child(lr, lv) + child(n - lr, n - lv)) / (2.0 * n);
            out.push((dim, tau, (0.5 - weighted) / 0.5));
        }
    }
    out
}

/// Highest-gain candidate; earlier (lower dim, smaller τ) wins ties.
pub fn oracle_split(points: &[Vec<f64>]) -> Option<(usize, f64, f64)> {
    split_candidates(points)
        .into_iter()
        .filter(|c| c.2 > 1e-12)
        .fold(None, |best: Option<(usize, f64, f64)>, c| match best {
            Some(b) if b.2 >= c.2 - 1e-12 => Some(b),
            _ => Some(c),
        })
}

/// Gap between the best and runner-up candidate gains.
pub fn split_margin(points: &[Vec<f64>]) -> f64 {
    let mut gains: Vec<f64> = split_candidates(points).iter().map(|c| c.2).collect();
    gains.sort_by(|a, b| b.total_cmp(a));
    match gains.as_slice() {
        [a, b, ..] => a - b,
        _ => f64::INFINITY,
    }
}

/// Runs the library's split search over all dimensions of `points`.
pub fn library_split(points: &[Vec<f64>]) -> Option<Split> {
    let q = points[0].len();
    let values: Vec<f64> = points.iter().flatten().copied().collect();
    let indices: Vec<usize> = (0..points.len()).collect();
    let bbox = NodeBox::from_rows(&values, q, &indices);
    let dims: Vec<usize> = (0..q).collect();
    best_split(
        &NodeView {
            values: &values,
            q,
            indices: &indices,
        },
        &bbox,
        &dims,
    )
}

/// Dense co-leaf counts from per-row leaf lookups.
pub fn brute_proximity(
    forest: &ClusterForest,
    m: &FeatureMatrix,
    rule: CoLeafRule,
) -> Vec<Vec<u32>> {
    let n = m.n_rows();
    let mut counts = vec![vec![0u32; n]; n];
    for (t, tree) in forest.trees.iter().enumerate() {
        let labels = tree.leaf_labels();
        let leaves: Vec<u32> = m.rows().map(|r| forest.apply(t, r).unwrap()).collect();
        for i in 0..n {
            for j in 0..n {
                let counted =
                    rule == CoLeafRule::AnyLeaf || labels[leaves[i] as usize] == LeafLabel::A;
                if i == j || (leaves[i] == leaves[j] && counted) {
                    counts[i][j] += 1;
                }
            }
        }
    }
    counts
}

/// Minimum successive-distance cost over all 2^(n-1) orientations of the tree.
pub fn brute_olo_cost(dendro: &Dendrogram, d: &DissimilarityMatrix) -> f64 {
    fn orders(dendro: &Dendrogram, node: usize) -> Vec<Vec<usize>> {
        match dendro.children(node) {
            None => vec![vec![node]],
            Some((l, r)) => {
                let (ls, rs) = (orders(dendro, l), orders(dendro, r));
                let mut out = Vec::new();
                for a in &ls {
                    for b in &rs {
                        out.push([a.as_slice(), b].concat());
                        out.push([b.as_slice(), a].concat());
                    }
                }
                out
            }
        }
    }
    orders(dendro, dendro.root())
        .iter()
        .map(|o| order_cost(d, o))
        .fold(f64::INFINITY, f64::min)
}
