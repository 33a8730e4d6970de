//! Co-leaf proximity `P` and the dissimilarity `D = √(1 − P)`.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::FeatureMatrix;
use crate::forest::{ClusterForest, ForestError, LeafLabel};

#[derive(Debug, Error)]
pub enum ProximityError {
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error("empty selection")]
    EmptySelection,
    #[error("row id {0} appears twice in the selection")]
    DuplicateRow(u64),
    #[error("row id {0} is not part of the matrix")]
    UnknownRow(u64),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Which shared leaves count toward proximity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoLeafRule {
    /// Any shared leaf, whatever its majority class.
    #[default]
    AnyLeaf,
    /// Only leaves where real points outnumber virtual noise.
    DataLeavesOnly,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub forest_hash: String,
    pub dataset_hash: String,
}

#[inline]
fn tri_index(m: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < m);
    // rows before i hold m, m-1, ..., m-i+1 entries
    i * m - i * i.saturating_sub(1) / 2 + (j - i)
}

/// Symmetric `M × M` proximity with unit diagonal, stored as co-leaf counts
/// over the upper triangle. Every entry is `count / trees`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityMatrix {
    size: usize,
    trees: u32,
    counts: Vec<u32>,
    row_ids: Vec<u64>,
    pub provenance: Provenance,
}

impl ProximityMatrix {
    /// Builds from a dense count function; used by tests and subsetting.
    pub fn from_counts(
        size: usize,
        trees: u32,
        row_ids: Vec<u64>,
        mut count: impl FnMut(usize, usize) -> u32,
    ) -> Self {
        assert_eq!(row_ids.len(), size);
        let mut counts = Vec::with_capacity(size * (size + 1) / 2);
        for i in 0..size {
            for j in i..size {
                counts.push(if i == j {
                    trees
                } else {
                    count(i, j).min(trees)
                });
            }
        }
        Self {
            size,
            trees,
            counts,
            row_ids,
            provenance: Provenance::default(),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn trees(&self) -> u32 {
        self.trees
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    pub fn count(&self, i: usize, j: usize) -> u32 {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.counts[tri_index(self.size, a, b)]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        f64::from(self.count(i, j)) / f64::from(self.trees)
    }

    /// Mean of the off-diagonal entries.
    pub fn mean_off_diagonal(&self) -> f64 {
        let m = self.size;
        if m < 2 {
            return 0.0;
        }
        let total: u64 = self.counts.iter().map(|&c| u64::from(c)).sum::<u64>()
            - u64::from(self.trees) * m as u64;
        let pairs = (m * (m - 1) / 2) as f64;
        total as f64 / f64::from(self.trees) / pairs
    }

    /// Principal submatrix over `ids`, in the given order, keeping the ids.
    pub fn subset(&self, ids: &[u64]) -> Result<Self, ProximityError> {
        if ids.is_empty() {
            return Err(ProximityError::EmptySelection);
        }
        let index: HashMap<u64, usize> = self
            .row_ids
            .iter()
            .enumerate()
            .map(|(p, &id)| (id, p))
            .collect();
        let mut seen = std::collections::HashSet::new();
        let mut pos = Vec::with_capacity(ids.len());
        for &id in ids {
            if !seen.insert(id) {
                return Err(ProximityError::DuplicateRow(id));
            }
            pos.push(*index.get(&id).ok_or(ProximityError::UnknownRow(id))?);
        }
        let mut out = Self::from_counts(ids.len(), self.trees, ids.to_vec(), |i, j| {
            self.count(pos[i], pos[j])
        });
        out.provenance = self.provenance.clone();
        Ok(out)
    }

    /// Rows and columns reordered so that entry `(i, j)` is `P[order[i], order[j]]`.
    /// `order` must be a permutation of `0..size`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.size);
        let m = self.size;
        let mut counts = vec![0u32; self.counts.len()];
        let mut rows: Vec<&mut [u32]> = Vec::with_capacity(m);
        let mut rest = counts.as_mut_slice();
        for i in 0..m {
            let (row, tail) = rest.split_at_mut(m - i);
            rows.push(row);
            rest = tail;
        }
        rows.into_par_iter().enumerate().for_each(|(i, row)| {
            for (k, slot) in row.iter_mut().enumerate() {
                *slot = self.count(order[i], order[i + k]);
            }
        });
        Self {
            size: m,
            trees: self.trees,
            counts,
            row_ids: order.iter().map(|&p| self.row_ids[p]).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Reads a dump written by [`ProximityMatrix::write_f32`] back into
    /// counts; `trees` must be the forest size it was built with.
    pub fn read_f32<R: std::io::Read>(
        mut r: R,
        trees: u32,
        row_ids: Vec<u64>,
        provenance: Provenance,
    ) -> Result<Self, ProximityError> {
        let m = row_ids.len();
        let mut row = vec![0u8; m * 4];
        let mut counts = Vec::with_capacity(m * (m + 1) / 2);
        for i in 0..m {
            r.read_exact(&mut row)?;
            for j in i..m {
                let v = f32::from_le_bytes(row[j * 4..j * 4 + 4].try_into().unwrap());
                counts.push((f64::from(v) * f64::from(trees)).round() as u32);
            }
        }
        Ok(Self {
            size: m,
            trees,
            counts,
            row_ids,
            provenance,
        })
    }

    /// Dense row-major little-endian `f32` dump.
    pub fn write_f32<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(self.size * 4);
        for i in 0..self.size {
            buf.clear();
            for j in 0..self.size {
                buf.extend_from_slice(&(self.get(i, j) as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }
}

/// Routes every row of `matrix` through every tree and counts, for each
/// pair, the trees in which both rows land in the same leaf.
pub fn build_proximity(
    forest: &ClusterForest,
    matrix: &FeatureMatrix,
    rule: CoLeafRule,
) -> Result<ProximityMatrix, ProximityError> {
    let m = matrix.n_rows();
    let b = forest.trees.len();
    let assignments: Vec<Vec<u32>> = (0..b)
        .into_par_iter()
        .map(|t| forest.leaf_assignments(t, matrix))
        .collect::<Result<_, _>>()?;

    // members[t][leaf] = rows in that leaf, ascending; data-only rule drops C leaves
    let members: Vec<Vec<Vec<u32>>> = assignments
        .par_iter()
        .enumerate()
        .map(|(t, leaves)| {
            let tree = &forest.trees[t];
            let labels = tree.leaf_labels();
            let mut groups = vec![Vec::new(); tree.n_leaves as usize];
            for (i, &leaf) in leaves.iter().enumerate() {
                if rule == CoLeafRule::AnyLeaf || labels[leaf as usize] == LeafLabel::A {
                    groups[leaf as usize].push(i as u32);
                }
            }
            groups
        })
        .collect();

    let mut counts = vec![0u32; m * (m + 1) / 2];
    let mut rows: Vec<&mut [u32]> = Vec::with_capacity(m);
    let mut rest = counts.as_mut_slice();
    for i in 0..m {
        let (row, tail) = rest.split_at_mut(m - i);
        rows.push(row);
        rest = tail;
    }
    rows.into_par_iter().enumerate().for_each(|(i, row)| {
        row[0] = b as u32;
        for t in 0..b {
            let group = &members[t][assignments[t][i] as usize];
            let Ok(at) = group.binary_search(&(i as u32)) else {
                continue;
            };
            for &j in &group[at + 1..] {
                row[j as usize - i] += 1;
            }
        }
    });

    Ok(ProximityMatrix {
        size: m,
        trees: b as u32,
        counts,
        row_ids: matrix.row_ids().to_vec(),
        provenance: Provenance {
            forest_hash: forest.config.content_hash(),
            dataset_hash: matrix.content_hash(),
        },
    })
}

/// Condensed (strict upper triangle) dissimilarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    size: usize,
    values: Vec<f64>,
}

#[inline]
pub(crate) fn condensed_index(m: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < m);
    m * i - i * (i + 1) / 2 + (j - i - 1)
}

impl DissimilarityMatrix {
    /// Builds from a symmetric function; `f(i, i)` is never asked.
    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(size * size.saturating_sub(1) / 2);
        for i in 0..size {
            for j in i + 1..size {
                values.push(f(i, j));
            }
        }
        Self { size, values }
    }

    pub fn from_condensed(size: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), size * size.saturating_sub(1) / 2);
        Self { size, values }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.values[condensed_index(self.size, i, j)],
            std::cmp::Ordering::Greater => self.values[condensed_index(self.size, j, i)],
        }
    }

    pub fn condensed(&self) -> &[f64] {
        &self.values
    }

    pub fn write_f32<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(self.size * 4);
        for i in 0..self.size {
            buf.clear();
            for j in 0..self.size {
                buf.extend_from_slice(&(self.get(i, j) as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }
}

/// Elementwise `√(1 − P)`.
pub fn to_dissimilarity(p: &ProximityMatrix) -> DissimilarityMatrix {
    let m = p.size();
    let mut values = vec![0.0; m * m.saturating_sub(1) / 2];
    let mut rows: Vec<&mut [f64]> = Vec::with_capacity(m);
    let mut rest = values.as_mut_slice();
    for i in 0..m {
        let (row, tail) = rest.split_at_mut(m - i - 1);
        rows.push(row);
        rest = tail;
    }
    rows.into_par_iter().enumerate().for_each(|(i, row)| {
        for (k, slot) in row.iter_mut().enumerate() {
            *slot = (1.0 - p.get(i, i + 1 + k)).max(0.0).sqrt();
        }
    });
    DissimilarityMatrix { size: m, values }
}
