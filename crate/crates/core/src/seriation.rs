//! Agglomerative linkage, dendrogram leaf orders and optimal leaf ordering.
//!
//! Dendrograms follow the usual linkage-matrix layout: leaves are `0..M`,
//! merge `k` creates node `M + k`, merges are sorted by height, and within
//! a merge the child with the smaller id is stored on the left.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::proximity::{condensed_index, DissimilarityMatrix};

pub const DENDROGRAM_CONVENTIONS: &str =
    "leaves 0..n; merge k creates node n+k; merges sorted by height; left child has the smaller id";

#[derive(Debug, Error)]
pub enum SeriationError {
    #[error("need at least one leaf")]
    Empty,
    #[error("cluster count {k} outside 1..={n}")]
    BadClusterCount { k: usize, n: usize },
    #[error("unknown linkage {0:?}")]
    UnknownLinkage(String),
    #[error("malformed dendrogram: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Average,
    Single,
    Complete,
}

impl Linkage {
    pub fn as_str(self) -> &'static str {
        match self {
            Linkage::Average => "average",
            Linkage::Single => "single",
            Linkage::Complete => "complete",
        }
    }
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Linkage {
    type Err = SeriationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "average" => Ok(Linkage::Average),
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            other => Err(SeriationError::UnknownLinkage(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub linkage: Linkage,
    pub conventions: String,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn root(&self) -> usize {
        2 * self.n_leaves - 2
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        node < self.n_leaves
    }

    pub fn children(&self, node: usize) -> Option<(usize, usize)> {
        (node >= self.n_leaves).then(|| {
            let m = &self.merges[node - self.n_leaves];
            (m.left, m.right)
        })
    }

    pub fn height(&self, node: usize) -> f64 {
        if node < self.n_leaves {
            0.0
        } else {
            self.merges[node - self.n_leaves].height
        }
    }

    /// Checks the layout invariants, e.g. after deserializing.
    pub fn validate(&self) -> Result<(), SeriationError> {
        let n = self.n_leaves;
        if n == 0 {
            return Err(SeriationError::Empty);
        }
        if self.merges.len() != n - 1 {
            return Err(SeriationError::Malformed(format!(
                "{} merges for {n} leaves",
                self.merges.len()
            )));
        }
        let mut used = vec![false; 2 * n - 1];
        let mut size = vec![1usize; 2 * n - 1];
        for (k, m) in self.merges.iter().enumerate() {
            let id = n + k;
            if m.left >= m.right || m.right >= id || used[m.left] || used[m.right] {
                return Err(SeriationError::Malformed(format!(
                    "merge {k} has bad children"
                )));
            }
            if k > 0 && m.height < self.merges[k - 1].height {
                return Err(SeriationError::Malformed(format!(
                    "merge {k} is out of height order"
                )));
            }
            used[m.left] = true;
            used[m.right] = true;
            size[id] = size[m.left] + size[m.right];
            if m.size != size[id] {
                return Err(SeriationError::Malformed(format!(
                    "merge {k} has wrong size"
                )));
            }
        }
        Ok(())
    }
}

/// Agglomerative clustering by the nearest-neighbour chain algorithm.
pub fn linkage(d: &DissimilarityMatrix, method: Linkage) -> Result<Dendrogram, SeriationError> {
    let n = d.size();
    if n == 0 {
        return Err(SeriationError::Empty);
    }
    let mut work = d.condensed().to_vec();
    let dist = |w: &[f64], i: usize, j: usize| {
        if i < j {
            w[condensed_index(n, i, j)]
        } else {
            w[condensed_index(n, j, i)]
        }
    };
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    // (slot x, slot y, height) with the merged cluster kept in slot y
    let mut raw: Vec<(usize, usize, f64)> = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::with_capacity(n);

    for _ in 0..n.saturating_sub(1) {
        if chain.is_empty() {
            chain.push(
                active
                    .iter()
                    .position(|&a| a)
                    .expect("an active cluster remains"),
            );
        }
        let (x, y, h) = loop {
            let x = *chain.last().unwrap();
            let prev = chain.len().checked_sub(2).map(|p| chain[p]);
            let (mut best, mut best_d) = match prev {
                Some(p) => (p, dist(&work, x, p)),
                None => (usize::MAX, f64::INFINITY),
            };
            for (k, &on) in active.iter().enumerate() {
                if k == x || !on {
                    continue;
                }
                let dk = dist(&work, x, k);
                if dk < best_d {
                    best = k;
                    best_d = dk;
                }
            }
            if Some(best) == prev {
                chain.pop();
                chain.pop();
                break (x.min(best), x.max(best), best_d);
            }
            chain.push(best);
        };

        raw.push((x, y, h));
        let (nx, ny) = (size[x] as f64, size[y] as f64);
        active[x] = false;
        for (k, &on) in active.iter().enumerate() {
            if !on || k == y {
                continue;
            }
            let dx = dist(&work, x, k);
            let dy = dist(&work, y, k);
            let v = match method {
                Linkage::Single => dx.min(dy),
                Linkage::Complete => dx.max(dy),
                Linkage::Average => (nx * dx + ny * dy) / (nx + ny),
            };
            let idx = if y < k {
                condensed_index(n, y, k)
            } else {
                condensed_index(n, k, y)
            };
            work[idx] = v;
        }
        size[y] += size[x];
    }

    raw.sort_by(|a, b| a.2.total_cmp(&b.2));
    Ok(relabel(n, method, &raw))
}

/// Turns slot-pair merges into node ids with a union-find pass.
fn relabel(n: usize, method: Linkage, raw: &[(usize, usize, f64)]) -> Dendrogram {
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    let mut size = vec![1usize; 2 * n - 1];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut merges = Vec::with_capacity(raw.len());
    for (k, &(x, y, h)) in raw.iter().enumerate() {
        let (a, b) = (find(&mut parent, x), find(&mut parent, y));
        let id = n + k;
        parent[a] = id;
        parent[b] = id;
        size[id] = size[a] + size[b];
        merges.push(Merge {
            left: a.min(b),
            right: a.max(b),
            height: h,
            size: size[id],
        });
    }
    Dendrogram {
        n_leaves: n,
        linkage: method,
        conventions: DENDROGRAM_CONVENTIONS.to_owned(),
        merges,
    }
}

/// Leaves in depth-first order, left (smaller id) child first.
pub fn hc_order(dendro: &Dendrogram) -> Vec<usize> {
    let mut out = Vec::with_capacity(dendro.n_leaves);
    let mut stack = vec![dendro.root()];
    while let Some(node) = stack.pop() {
        match dendro.children(node) {
            Some((l, r)) => {
                stack.push(r);
                stack.push(l);
            }
            None => out.push(node),
        }
    }
    out
}

/// Sum of dissimilarities between neighbours in `order`.
pub fn order_cost(d: &DissimilarityMatrix, order: &[usize]) -> f64 {
    order.windows(2).map(|w| d.get(w[0], w[1])).sum()
}

/// Positions covered by each node in HC order: `(start, split, end)`.
/// Leaves have `split == end`.
fn node_spans(dendro: &Dendrogram, leaf_pos: &[usize]) -> Vec<(usize, usize, usize)> {
    let n = dendro.n_leaves;
    let mut spans = vec![(0, 0, 0); 2 * n - 1];
    for leaf in 0..n {
        let p = leaf_pos[leaf];
        spans[leaf] = (p, p + 1, p + 1);
    }
    for (k, m) in dendro.merges.iter().enumerate() {
        let (a, _, c) = spans[m.left];
        let (_, _, b) = spans[m.right];
        debug_assert_eq!(c, spans[m.right].0);
        spans[n + k] = (a, c, b);
    }
    spans
}

struct OloState<'a> {
    dendro: &'a Dendrogram,
    spans: Vec<(usize, usize, usize)>,
    /// Dissimilarity between HC positions.
    dpos: Vec<f64>,
    /// Best cost of an ordering of `lca(u, w)` running from `u` to `w`.
    best: Vec<f64>,
    n: usize,
}

impl OloState<'_> {
    #[inline]
    fn d(&self, a: usize, b: usize) -> f64 {
        self.dpos[a * self.n + b]
    }

    #[inline]
    fn m(&self, a: usize, b: usize) -> f64 {
        self.best[a * self.n + b]
    }

    /// Positions inside `node` that can end an ordering of `node` starting
    /// at `u`: the other child's span, or `u` itself for a leaf.
    fn partners(&self, node: usize, u: usize) -> std::ops::Range<usize> {
        let (a, s, b) = self.spans[node];
        if self.dendro.is_leaf(node) {
            a..b
        } else if u < s {
            s..b
        } else {
            a..s
        }
    }

    /// Best `m` for a fixed start `u` in `l` and entry `k` into the sibling.
    fn best_exit(&self, l: usize, u: usize, k: usize) -> (usize, f64) {
        // later partners first so that ties keep the canonical orientation
        let mut best = (usize::MAX, f64::INFINITY);
        for m in self.partners(l, u).rev() {
            let c = self.m(u, m) + self.d(m, k);
            if c < best.1 {
                best = (m, c);
            }
        }
        best
    }

    fn best_entry(&self, l: usize, r: usize, u: usize, w: usize) -> (usize, usize, f64) {
        let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
        for k in self.partners(r, w) {
            let (m, t) = self.best_exit(l, u, k);
            let c = t + self.m(k, w);
            if c < best.2 {
                best = (m, k, c);
            }
        }
        best
    }

    fn fill(&mut self) {
        let n = self.n;
        for v in n..2 * n - 1 {
            let (l, r) = self.dendro.children(v).unwrap();
            let (a, s, b) = self.spans[v];
            let this = &*self;
            let rows: Vec<Vec<f64>> = (a..s)
                .into_par_iter()
                .map(|u| {
                    let t: Vec<f64> = (s..b).map(|k| this.best_exit(l, u, k).1).collect();
                    (s..b)
                        .map(|w| {
                            this.partners(r, w)
                                .map(|k| t[k - s] + this.m(k, w))
                                .fold(f64::INFINITY, f64::min)
                        })
                        .collect()
                })
                .collect();
            for (u, row) in (a..s).zip(rows) {
                for (w, c) in (s..b).zip(row) {
                    self.best[u * n + w] = c;
                    self.best[w * n + u] = c;
                }
            }
        }
    }

    /// Appends the positions of an optimal ordering of `node` from `u` to `w`.
    fn trace(&self, node: usize, u: usize, w: usize, out: &mut Vec<usize>) {
        let mut stack = vec![(node, u, w)];
        while let Some((v, u, w)) = stack.pop() {
            if self.dendro.is_leaf(v) {
                out.push(u);
                continue;
            }
            let (l, r) = self.dendro.children(v).unwrap();
            let (_, s, _) = self.spans[v];
            if u < s {
                let (m, k, _) = self.best_entry(l, r, u, w);
                stack.push((r, k, w));
                stack.push((l, u, m));
            } else {
                // the ordering runs right to left; trace the reversal
                let (m, k, _) = self.best_entry(l, r, w, u);
                stack.push((l, m, w));
                stack.push((r, u, k));
            }
        }
    }
}

/// Leaf order minimising [`order_cost`] among the `2^(M-1)` orders
/// consistent with the dendrogram. Ties resolve toward the HC order.
pub fn olo_order(dendro: &Dendrogram, d: &DissimilarityMatrix) -> Vec<usize> {
    let n = dendro.n_leaves;
    let hc = hc_order(dendro);
    if n <= 2 {
        return hc;
    }
    let mut leaf_pos = vec![0; n];
    for (p, &leaf) in hc.iter().enumerate() {
        leaf_pos[leaf] = p;
    }
    let spans = node_spans(dendro, &leaf_pos);
    let mut dpos = vec![0.0; n * n];
    dpos.par_chunks_mut(n).enumerate().for_each(|(a, row)| {
        for (b, slot) in row.iter_mut().enumerate() {
            *slot = d.get(hc[a], hc[b]);
        }
    });
    let mut state = OloState {
        dendro,
        spans,
        dpos,
        best: vec![f64::INFINITY; n * n],
        n,
    };
    for p in 0..n {
        state.best[p * n + p] = 0.0;
    }
    state.fill();

    let root = dendro.root();
    let (_, s, b) = state.spans[root];
    let mut end = (0, b - 1, f64::INFINITY);
    for u in 0..s {
        for w in (s..b).rev() {
            let c = state.m(u, w);
            if c < end.2 {
                end = (u, w, c);
            }
        }
    }
    let mut positions = Vec::with_capacity(n);
    state.trace(root, end.0, end.1, &mut positions);
    positions.into_iter().map(|p| hc[p]).collect()
}

/// Cluster labels after undoing the last `k - 1` merges. Labels are
/// numbered by the smallest leaf index in each cluster.
pub fn flat_clusters(dendro: &Dendrogram, k: usize) -> Result<Vec<usize>, SeriationError> {
    let n = dendro.n_leaves;
    if k == 0 || k > n {
        return Err(SeriationError::BadClusterCount { k, n });
    }
    Ok(apply_merges(dendro, n - k))
}

/// Cluster labels when the tree is cut at `height`: merges at or below it
/// are kept.
pub fn flat_clusters_at(dendro: &Dendrogram, height: f64) -> Vec<usize> {
    let kept = dendro
        .merges
        .iter()
        .take_while(|m| m.height <= height)
        .count();
    apply_merges(dendro, kept)
}

fn apply_merges(dendro: &Dendrogram, count: usize) -> Vec<usize> {
    let n = dendro.n_leaves;
    let mut owner: Vec<usize> = (0..2 * n - 1).collect();
    // resolve top-down: each kept merge passes its representative to its children
    let mut rep = vec![usize::MAX; 2 * n - 1];
    for k in (0..count).rev() {
        let id = n + k;
        if rep[id] == usize::MAX {
            rep[id] = id;
        }
        let m = &dendro.merges[k];
        rep[m.left] = rep[id];
        rep[m.right] = rep[id];
    }
    for leaf in 0..n {
        owner[leaf] = if rep[leaf] == usize::MAX {
            leaf
        } else {
            rep[leaf]
        };
    }
    let mut names = std::collections::HashMap::new();
    (0..n)
        .map(|leaf| {
            let next = names.len();
            *names.entry(owner[leaf]).or_insert(next)
        })
        .collect()
}

/// Cluster labels listed in `order`, as runs `(label, start, end)`.
pub fn cluster_runs(labels: &[usize], order: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut runs: Vec<(usize, usize, usize)> = Vec::new();
    for (p, &leaf) in order.iter().enumerate() {
        match runs.last_mut() {
            Some(run) if run.0 == labels[leaf] => run.2 = p + 1,
            _ => runs.push((labels[leaf], p, p + 1)),
        }
    }
    runs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_points(xs: &[f64]) -> DissimilarityMatrix {
        DissimilarityMatrix::from_fn(xs.len(), |i, j| (xs[i] - xs[j]).abs())
    }

    #[test]
    fn four_point_average_linkage() {
        let d = from_points(&[0.0, 1.0, 5.0, 6.0]);
        let z = linkage(&d, Linkage::Average).unwrap();
        z.validate().unwrap();
        let rows: Vec<_> = z
            .merges
            .iter()
            .map(|m| (m.left, m.right, m.height, m.size))
            .collect();
        assert_eq!(rows, [(0, 1, 1.0, 2), (2, 3, 1.0, 2), (4, 5, 5.0, 4)]);
        assert_eq!(hc_order(&z), [0, 1, 2, 3]);
    }

    #[test]
    fn complete_and_single_heights() {
        let d = from_points(&[0.0, 1.0, 3.0]);
        let single = linkage(&d, Linkage::Single).unwrap();
        let complete = linkage(&d, Linkage::Complete).unwrap();
        assert_eq!(single.merges[1].height, 2.0);
        assert_eq!(complete.merges[1].height, 3.0);
        assert_eq!(
            linkage(&from_points(&[2.0]), Linkage::Average)
                .unwrap()
                .merges
                .len(),
            0
        );
    }

    #[test]
    fn olo_improves_flipped_tree() {
        // canonical order puts 1 next to 2 at distance 10, flipping gives 0 next to 3
        let pts = [[0.0, 0.0], [0.0, 1.0], [10.0, 1.0], [10.0, 0.0]];
        let mut d = DissimilarityMatrix::from_fn(4, |i, j| {
            let dx: f64 = pts[i][0] - pts[j][0];
            let dy: f64 = pts[i][1] - pts[j][1];
            dx.hypot(dy)
        });
        d = DissimilarityMatrix::from_fn(
            4,
            |i, j| if (i, j) == (0, 3) { 2.0 } else { d.get(i, j) },
        );
        let z = Dendrogram {
            n_leaves: 4,
            linkage: Linkage::Average,
            conventions: DENDROGRAM_CONVENTIONS.into(),
            merges: vec![
                Merge {
                    left: 0,
                    right: 1,
                    height: 1.0,
                    size: 2,
                },
                Merge {
                    left: 2,
                    right: 3,
                    height: 1.0,
                    size: 2,
                },
                Merge {
                    left: 4,
                    right: 5,
                    height: 10.0,
                    size: 4,
                },
            ],
        };
        let olo = olo_order(&z, &d);
        assert_eq!(olo, [1, 0, 3, 2]);
        assert!(order_cost(&d, &olo) < order_cost(&d, &hc_order(&z)));
    }

    #[test]
    fn olo_keeps_canonical_order_on_ties() {
        let d = DissimilarityMatrix::from_fn(6, |_, _| 1.0);
        let z = linkage(&d, Linkage::Average).unwrap();
        assert_eq!(olo_order(&z, &d), hc_order(&z));
    }

    #[test]
    fn flat_cluster_cuts() {
        let z = linkage(&from_points(&[0.0, 1.0, 5.0, 6.0, 20.0]), Linkage::Average).unwrap();
        assert_eq!(flat_clusters(&z, 1).unwrap(), [0, 0, 0, 0, 0]);
        assert_eq!(flat_clusters(&z, 2).unwrap(), [0, 0, 0, 0, 1]);
        assert_eq!(flat_clusters(&z, 3).unwrap(), [0, 0, 1, 1, 2]);
        assert_eq!(flat_clusters(&z, 5).unwrap(), [0, 1, 2, 3, 4]);
        assert_eq!(flat_clusters_at(&z, 1.0), [0, 0, 1, 1, 2]);
        assert!(flat_clusters(&z, 0).is_err());
        assert!(flat_clusters(&z, 6).is_err());
        assert_eq!(
            cluster_runs(&[0, 0, 1, 1, 2], &[0, 1, 2, 3, 4]),
            [(0, 0, 2), (1, 2, 4), (2, 4, 5)]
        );
    }

    #[test]
    fn dendrogram_json_round_trip() {
        let z = linkage(&from_points(&[0.0, 1.0, 5.0, 6.0]), Linkage::Complete).unwrap();
        let text = serde_json::to_string(&z).unwrap();
        let back: Dendrogram = serde_json::from_str(&text).unwrap();
        assert_eq!(back, z);
        back.validate().unwrap();
    }
}
