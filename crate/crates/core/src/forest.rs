//! Unsupervised random forest grown against virtual uniform noise.
//!
//! Every node pretends that as many uniform noise points as real points
//! share its bounding box. The noise is never sampled: for a threshold `τ`
//! along a dimension of width `w`, the left child receives
//! `M_D · (τ − min) / w` virtual points and the right child the rest. Splits
//! minimise the weighted two-class Gini impurity of real versus virtual
//! points over a random subset of `⌊√Q⌋` dimensions drawn afresh at each
//! node. Growth stops at nodes with fewer than `m_min` real points or an
//! inherited impurity at or below `i_min`.
//!
//! Randomness is keyed by tree index and node path rather than drawn from one
//! sequential stream, so two forests that differ only in `i_min` make the
//! same choices wherever both split. The coarser tree is then a pruned
//! prefix of the finer one.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::FeatureMatrix;

pub const FOREST_FORMAT: &str = "scenclust-forest";
pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("invalid forest config: {0}")]
    InvalidConfig(String),
    #[error("need at least 2 rows to train, got {0}")]
    TooFewRows(usize),
    #[error("point has {found} features, forest expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unsupported forest document: {0}")]
    Format(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    /// Number of trees `B`.
    pub trees: usize,
    /// Impurity threshold; nodes at or below it become leaves.
    pub i_min: f64,
    /// Minimum real points a node needs to be split.
    pub m_min: usize,
    pub seed: u64,
    /// Dimensions sampled per node; `None` means `⌊√Q⌋` (at least 1).
    #[serde(default)]
    pub subspace_size: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 200,
            i_min: 0.29,
            m_min: 2,
            seed: 0,
            subspace_size: None,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), ForestError> {
        if self.trees < 1 {
            return Err(ForestError::InvalidConfig("trees must be >= 1".into()));
        }
        if !(0.0..=0.5).contains(&self.i_min) {
            return Err(ForestError::InvalidConfig(format!(
                "i_min {} outside [0, 0.5]",
                self.i_min
            )));
        }
        if self.m_min < 2 {
            return Err(ForestError::InvalidConfig(format!(
                "m_min {} must be >= 2",
                self.m_min
            )));
        }
        if self.subspace_size == Some(0) {
            return Err(ForestError::InvalidConfig(
                "subspace_size must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn subspace_for(&self, q: usize) -> usize {
        let default = (q as f64).sqrt().floor() as usize;
        self.subspace_size.unwrap_or(default).clamp(1, q.max(1))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Per-dimension `[min, max]` of the real points in a node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeBox {
    pub bounds: Vec<(f64, f64)>,
}

impl NodeBox {
    /// Bounding box of rows `indices` of a row-major `values` table with `q` columns.
    pub fn from_rows(values: &[f64], q: usize, indices: &[usize]) -> Self {
        let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); q];
        for &i in indices {
            for (b, &v) in bounds.iter_mut().zip(&values[i * q..(i + 1) * q]) {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
        }
        Self { bounds }
    }

    pub fn width(&self, dim: usize) -> f64 {
        let (lo, hi) = self.bounds[dim];
        hi - lo
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        self.bounds
            .iter()
            .zip(point)
            .all(|(&(lo, hi), &v)| lo <= v && v <= hi)
    }
}

/// Virtual noise density `M_D / width` along `dim`. `None` when the node has
/// zero width there, which removes the dimension from the split search.
pub fn noise_density(bbox: &NodeBox, dim: usize, real_count: usize) -> Option<f64> {
    let w = bbox.width(dim);
    (w > 0.0).then(|| real_count as f64 / w)
}

/// Virtual points falling left and right of `tau`. The two always sum to
/// `real_count`, the balanced noise total of the node.
///
/// Panics if `tau` lies outside the box or the box has zero width in `dim`.
pub fn virtual_child_counts(bbox: &NodeBox, dim: usize, tau: f64, real_count: usize) -> (f64, f64) {
    let (lo, hi) = bbox.bounds[dim];
    assert!(hi > lo, "zero-width dimension {dim}");
    assert!(
        (lo..=hi).contains(&tau),
        "threshold {tau} outside [{lo}, {hi}]"
    );
    let total = real_count as f64;
    let left = (total * ((tau - lo) / (hi - lo))).clamp(0.0, total);
    (left, total - left)
}

/// Two-class Gini impurity of a node holding `real` data and `noise` virtual points.
pub fn gini_impurity(real: f64, noise: f64) -> f64 {
    let total = real + noise;
    if total <= 0.0 {
        return 0.0;
    }
    let p = real / total;
    let q = noise / total;
    1.0 - p * p - q * q
}

/// A selected split and its relative impurity reduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub dim: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Real points of one node: rows `indices` of a row-major table.
#[derive(Debug, Clone, Copy)]
pub struct NodeView<'a> {
    pub values: &'a [f64],
    pub q: usize,
    pub indices: &'a [usize],
}

impl NodeView<'_> {
    fn value(&self, i: usize, dim: usize) -> f64 {
        self.values[i * self.q + dim]
    }
}

/// Relative Gini reduction of a candidate split given the child counts.
fn relative_gain(m_d: f64, left_real: f64, left_virtual: f64) -> f64 {
    let right_real = m_d - left_real;
    let right_virtual = m_d - left_virtual;
    let parent = gini_impurity(m_d, m_d);
    let tl = left_real + left_virtual;
    let tr = right_real + right_virtual;
    let weighted = (tl * gini_impurity(left_real, left_virtual)
        + tr * gini_impurity(right_real, right_virtual))
        / (2.0 * m_d);
    (parent - weighted) / parent
}

/// Gains closer than this count as tied, so that round-off does not
/// override the lower-dimension, smaller-threshold preference.
pub const GAIN_TIE_EPS: f64 = 1e-12;

/// Best threshold over `dims`, scanning midpoints between consecutive
/// distinct values. Ties go to the lower dimension index, then the smaller
/// threshold. `None` when every dimension is degenerate or no candidate
/// improves on the parent.
pub fn best_split(view: &NodeView<'_>, bbox: &NodeBox, dims: &[usize]) -> Option<Split> {
    let n = view.indices.len();
    if n < 2 {
        return None;
    }
    let m_d = n as f64;
    let mut dims = dims.to_vec();
    dims.sort_unstable();
    dims.dedup();

    let mut best: Option<Split> = None;
    let mut column = Vec::with_capacity(n);
    for &dim in &dims {
        if noise_density(bbox, dim, n).is_none() {
            continue;
        }
        column.clear();
        column.extend(view.indices.iter().map(|&i| view.value(i, dim)));
        column.sort_unstable_by(f64::total_cmp);
        for k in 0..n - 1 {
            let (a, b) = (column[k], column[k + 1]);
            if a >= b {
                continue;
            }
            let mut tau = a + (b - a) / 2.0;
            if tau >= b {
                tau = a;
            }
            let (left_virtual, _) = virtual_child_counts(bbox, dim, tau, n);
            let gain = relative_gain(m_d, (k + 1) as f64, left_virtual);
            if gain > best.map_or(0.0, |s| s.gain) + GAIN_TIE_EPS {
                best = Some(Split {
                    dim,
                    threshold: tau,
                    gain,
                });
            }
        }
    }
    best
}

/// Majority class of a leaf: real data (`A`) or virtual noise (`C`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeafLabel {
    A,
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NodeKind {
    Internal {
        dim: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        label: LeafLabel,
        leaf_id: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    #[serde(flatten)]
    pub kind: NodeKind,
    /// Real points reaching the node during training, `M_D`.
    pub real_count: usize,
    /// Virtual points the parent's split assigned to this node.
    pub virtual_count: f64,
    /// Gini impurity of `real_count` against `virtual_count`.
    pub impurity: f64,
    /// Training-time bounding box; empty after deserialization.
    #[serde(skip)]
    pub bbox: NodeBox,
    /// Dimensions offered to the split search; empty after deserialization.
    #[serde(skip)]
    pub sampled_dims: Vec<usize>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }
}

/// Flat node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    pub n_leaves: u32,
}

impl Tree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    /// Leaf reached by `point`; values equal to a threshold go left.
    pub fn apply(&self, point: &[f64]) -> u32 {
        let mut at = 0usize;
        loop {
            match self.nodes[at].kind {
                NodeKind::Internal {
                    dim,
                    threshold,
                    left,
                    right,
                } => {
                    at = if point[dim] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
                NodeKind::Leaf { leaf_id, .. } => return leaf_id,
            }
        }
    }

    /// Label of every leaf, indexed by leaf id.
    pub fn leaf_labels(&self) -> Vec<LeafLabel> {
        let mut out = vec![LeafLabel::A; self.n_leaves as usize];
        for n in &self.nodes {
            if let NodeKind::Leaf { label, leaf_id } = n.kind {
                out[leaf_id as usize] = label;
            }
        }
        out
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, at: usize) -> usize {
            match t.nodes[at].kind {
                NodeKind::Internal { left, right, .. } => {
                    1 + go(t, left as usize).max(go(t, right as usize))
                }
                NodeKind::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn root_key(seed: u64, tree: usize) -> u64 {
    splitmix64(seed ^ splitmix64(tree as u64 ^ 0xA5A5_A5A5))
}

fn child_key(parent: u64, right: bool) -> u64 {
    splitmix64(
        parent
            ^ if right {
                0x6A09_E667_F3BC_C909
            } else {
                0xBB67_AE85_84CA_A73B
            },
    )
}

fn sample_dims(key: u64, q: usize, k: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let mut dims = sample(&mut rng, q, k).into_vec();
    dims.sort_unstable();
    dims
}

/// Grows one tree over the rows `bag` (duplicates allowed) of a row-major
/// table with `q` columns. `key` seeds the per-node dimension sampling.
pub fn grow_tree(values: &[f64], q: usize, bag: &[usize], config: &ForestConfig, key: u64) -> Tree {
    struct Pending {
        slot: usize,
        indices: Vec<usize>,
        virtual_count: f64,
        key: u64,
    }

    let k = config.subspace_for(q);
    let placeholder = |real: usize, virt: f64| TreeNode {
        kind: NodeKind::Leaf {
            label: LeafLabel::A,
            leaf_id: 0,
        },
        real_count: real,
        virtual_count: virt,
        impurity: gini_impurity(real as f64, virt),
        bbox: NodeBox::default(),
        sampled_dims: Vec::new(),
    };

    let mut nodes = vec![placeholder(bag.len(), bag.len() as f64)];
    let mut n_leaves = 0u32;
    let mut stack = vec![Pending {
        slot: 0,
        indices: bag.to_vec(),
        virtual_count: bag.len() as f64,
        key,
    }];

    while let Some(p) = stack.pop() {
        let m_d = p.indices.len();
        let bbox = NodeBox::from_rows(values, q, &p.indices);
        let impurity = nodes[p.slot].impurity;
        let dims = sample_dims(p.key, q, k);

        let split = if m_d >= config.m_min && impurity > config.i_min {
            best_split(
                &NodeView {
                    values,
                    q,
                    indices: &p.indices,
                },
                &bbox,
                &dims,
            )
        } else {
            None
        };

        nodes[p.slot].bbox = bbox;
        nodes[p.slot].sampled_dims = dims;

        match split {
            Some(s) => {
                let (lv, rv) = virtual_child_counts(&nodes[p.slot].bbox, s.dim, s.threshold, m_d);
                let (li, ri): (Vec<usize>, Vec<usize>) = p
                    .indices
                    .iter()
                    .partition(|&&i| values[i * q + s.dim] <= s.threshold);
                let left = nodes.len();
                nodes.push(placeholder(li.len(), lv));
                nodes.push(placeholder(ri.len(), rv));
                nodes[p.slot].kind = NodeKind::Internal {
                    dim: s.dim,
                    threshold: s.threshold,
                    left: left as u32,
                    right: left as u32 + 1,
                };
                // right first so the left subtree is finished first and leaf ids run left to right
                stack.push(Pending {
                    slot: left + 1,
                    indices: ri,
                    virtual_count: rv,
                    key: child_key(p.key, true),
                });
                stack.push(Pending {
                    slot: left,
                    indices: li,
                    virtual_count: lv,
                    key: child_key(p.key, false),
                });
            }
            None => {
                let label = if m_d as f64 >= p.virtual_count {
                    LeafLabel::A
                } else {
                    LeafLabel::C
                };
                nodes[p.slot].kind = NodeKind::Leaf {
                    label,
                    leaf_id: n_leaves,
                };
                n_leaves += 1;
            }
        }
    }
    Tree { nodes, n_leaves }
}

/// Trained ensemble plus the bootstrap rows of every tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterForest {
    pub config: ForestConfig,
    pub n_features: usize,
    pub trees: Vec<Tree>,
    pub bags: Vec<Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct ForestDocument {
    format: String,
    version: u32,
    #[serde(flatten)]
    forest: ClusterForest,
}

/// Bootstrap sample of `m` rows for tree `tree`.
pub fn bootstrap(seed: u64, tree: usize, m: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64 + 1);
    (0..m).map(|_| rng.gen_range(0..m)).collect()
}

/// Trains `config.trees` trees, each on an `M`-row bootstrap sample. Trees
/// are grown in parallel; the result does not depend on thread count.
pub fn train_forest(
    matrix: &FeatureMatrix,
    config: &ForestConfig,
) -> Result<ClusterForest, ForestError> {
    config.validate()?;
    let m = matrix.n_rows();
    if m < 2 {
        return Err(ForestError::TooFewRows(m));
    }
    let q = matrix.n_cols();
    let values = matrix.values();
    let grown: Vec<(Tree, Vec<u32>)> = (0..config.trees)
        .into_par_iter()
        .map(|b| {
            let bag = bootstrap(config.seed, b, m);
            let tree = grow_tree(values, q, &bag, config, root_key(config.seed, b));
            (tree, bag.into_iter().map(|i| i as u32).collect())
        })
        .collect();
    let (trees, bags) = grown.into_iter().unzip();
    Ok(ClusterForest {
        config: config.clone(),
        n_features: q,
        trees,
        bags,
    })
}

impl ClusterForest {
    pub fn apply(&self, tree: usize, point: &[f64]) -> Result<u32, ForestError> {
        if point.len() != self.n_features {
            return Err(ForestError::DimensionMismatch {
                expected: self.n_features,
                found: point.len(),
            });
        }
        Ok(self.trees[tree].apply(point))
    }

    /// Leaf id of every row of `matrix` in tree `tree`.
    pub fn leaf_assignments(
        &self,
        tree: usize,
        matrix: &FeatureMatrix,
    ) -> Result<Vec<u32>, ForestError> {
        if matrix.n_cols() != self.n_features {
            return Err(ForestError::DimensionMismatch {
                expected: self.n_features,
                found: matrix.n_cols(),
            });
        }
        let t = &self.trees[tree];
        Ok(matrix.rows().map(|r| t.apply(r)).collect())
    }

    /// Versioned JSON document. Node boxes and sampled dimensions are not stored.
    pub fn to_json(&self) -> Result<Vec<u8>, ForestError> {
        let doc = ForestDocument {
            format: FOREST_FORMAT.into(),
            version: FOREST_FORMAT_VERSION,
            forest: self.clone(),
        };
        Ok(serde_json::to_vec(&doc)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ForestError> {
        let doc: ForestDocument = serde_json::from_slice(bytes)?;
        if doc.format != FOREST_FORMAT || doc.version != FOREST_FORMAT_VERSION {
            return Err(ForestError::Format(format!(
                "{} v{}",
                doc.format, doc.version
            )));
        }
        doc.forest.config.validate()?;
        Ok(doc.forest)
    }
}
