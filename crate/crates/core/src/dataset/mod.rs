//! Feature schema and the immutable feature matrix fed to the forest.

mod csv_io;
mod features;
mod synthetic;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use csv_io::{load_csv, read_csv, save_csv, write_csv};
pub use features::{
    extract_features, fold_heading_difference, RoadAttributes, RADIUS_CAP, STRAIGHT_ROAD_RADIUS,
};
pub use synthetic::{
    generate_synthetic, generate_windows, Range, SceneryTemplate, SyntheticScenario,
};

/// Name of the optional evaluation-only label column.
pub const LABEL_COLUMN: &str = "type";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("missing column {0:?} in header")]
    MissingColumn(String),
    #[error("unexpected column {name:?} at position {position}")]
    UnexpectedColumn { name: String, position: usize },
    #[error("row {row}, column {column:?}: cannot parse {value:?} as a number")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column {column:?}: non-finite value {value}")]
    NonFinite {
        row: usize,
        column: String,
        value: f64,
    },
    #[error("row {row}, column {column:?}: binary column holds {value}, expected 0 or 1")]
    BinaryViolation {
        row: usize,
        column: String,
        value: f64,
    },
    #[error("row {row}: unknown scenery label {value:?}")]
    BadLabel { row: usize, value: String },
    #[error("row {row}: expected {expected} fields, found {found}")]
    RowLength {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("need at least {min} rows, found {found}")]
    TooFewRows { min: usize, found: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("window is not critical; only critical windows yield feature vectors")]
    NotCritical,
    #[error("no scenery templates given")]
    NoTemplates,
    #[error("count per template must be >= 1")]
    ZeroCount,
    #[error("template {0:?} failed to produce a critical window")]
    GeneratorStalled(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_group: Option<String>,
}

impl Column {
    pub fn continuous(name: &str) -> Self {
        Self {
            name: name.to_owned(),
            kind: ColumnKind::Continuous,
            display_group: None,
        }
    }

    pub fn binary(name: &str) -> Self {
        Self {
            name: name.to_owned(),
            kind: ColumnKind::Binary,
            display_group: None,
        }
    }

    pub fn in_group(mut self, group: &str) -> Self {
        self.display_group = Some(group.to_owned());
        self
    }
}

/// Ordered column list with unique names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Column>", into = "Vec<Column>")]
pub struct FeatureSchema {
    columns: Vec<Column>,
}

impl TryFrom<Vec<Column>> for FeatureSchema {
    type Error = DatasetError;
    fn try_from(columns: Vec<Column>) -> Result<Self, Self::Error> {
        Self::new(columns)
    }
}

impl From<FeatureSchema> for Vec<Column> {
    fn from(s: FeatureSchema) -> Self {
        s.columns
    }
}

impl FeatureSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) || c.name == LABEL_COLUMN {
                return Err(DatasetError::DuplicateColumn(c.name.clone()));
            }
        }
        Ok(Self { columns })
    }

    /// The ten scenario features: ego and target speeds at `t_-2` and `t0`
    /// with braking flags, relative heading, road radius, speed limit and
    /// lane count.
    pub fn scenario() -> Self {
        Self::new(vec![
            Column::continuous("v_eg_t-2").in_group("velocity"),
            Column::continuous("v_eg_t0").in_group("velocity"),
            Column::binary("b_eg"),
            Column::continuous("v_tg_t-2").in_group("velocity"),
            Column::continuous("v_tg_t0").in_group("velocity"),
            Column::binary("b_tg"),
            Column::continuous("delta_rel"),
            Column::continuous("r"),
            Column::continuous("v_lim"),
            Column::continuous("n_L"),
        ])
        .expect("reference schema is valid")
    }

    /// Schema of `q` anonymous continuous columns `x0..x{q-1}`.
    pub fn numeric(q: usize) -> Self {
        Self::new(
            (0..q)
                .map(|i| Column::continuous(&format!("x{i}")))
                .collect(),
        )
        .expect("generated names are unique")
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }
}

/// Road context a scenario was recorded in. Used for evaluation displays only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenery {
    Highway,
    Crossing,
    Roundabout,
}

impl Scenery {
    pub const ALL: [Scenery; 3] = [Scenery::Highway, Scenery::Crossing, Scenery::Roundabout];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenery::Highway => "highway",
            Scenery::Crossing => "crossing",
            Scenery::Roundabout => "roundabout",
        }
    }
}

impl fmt::Display for Scenery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenery {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "highway" => Ok(Scenery::Highway),
            "crossing" => Ok(Scenery::Crossing),
            "roundabout" => Ok(Scenery::Roundabout),
            other => Err(other.to_owned()),
        }
    }
}

/// `M × Q` table of finite values with stable row identifiers.
///
/// Labels ride along for display but are never read by the clustering path;
/// [`FeatureMatrix::content_hash`] ignores them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    schema: FeatureSchema,
    values: Vec<f64>,
    row_ids: Vec<u64>,
    labels: Option<Vec<Scenery>>,
}

impl FeatureMatrix {
    /// Builds a matrix from row-major `values`; row ids default to file order.
    pub fn new(schema: FeatureSchema, values: Vec<f64>) -> Result<Self, DatasetError> {
        let q = schema.len();
        if q == 0 || !values.len().is_multiple_of(q) {
            return Err(DatasetError::Shape(format!(
                "{} values do not fill rows of {} columns",
                values.len(),
                q
            )));
        }
        let m = values.len() / q;
        Self::from_parts(schema, values, (0..m as u64).collect(), None)
    }

    pub fn from_parts(
        schema: FeatureSchema,
        values: Vec<f64>,
        row_ids: Vec<u64>,
        labels: Option<Vec<Scenery>>,
    ) -> Result<Self, DatasetError> {
        let q = schema.len();
        if q == 0 || values.len() != row_ids.len() * q {
            return Err(DatasetError::Shape(format!(
                "{} values for {} rows of {} columns",
                values.len(),
                row_ids.len(),
                q
            )));
        }
        if let Some(l) = &labels {
            if l.len() != row_ids.len() {
                return Err(DatasetError::Shape(format!(
                    "{} labels for {} rows",
                    l.len(),
                    row_ids.len()
                )));
            }
        }
        let m = Self {
            schema,
            values,
            row_ids,
            labels,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let q = self.schema.len();
        for (i, row) in self.values.chunks_exact(q).enumerate() {
            for (col, &v) in self.schema.columns.iter().zip(row) {
                if !v.is_finite() {
                    return Err(DatasetError::NonFinite {
                        row: i,
                        column: col.name.clone(),
                        value: v,
                    });
                }
                if col.kind == ColumnKind::Binary && v != 0.0 && v != 1.0 {
                    return Err(DatasetError::BinaryViolation {
                        row: i,
                        column: col.name.clone(),
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let q = self.n_cols();
        &self.values[i * q..(i + 1) * q]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols() + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_cols())
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[j])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    pub fn labels(&self) -> Option<&[Scenery]> {
        self.labels.as_deref()
    }

    /// Same matrix with its labels replaced (or removed).
    pub fn with_labels(mut self, labels: Option<Vec<Scenery>>) -> Result<Self, DatasetError> {
        if let Some(l) = &labels {
            if l.len() != self.n_rows() {
                return Err(DatasetError::Shape(format!(
                    "{} labels for {} rows",
                    l.len(),
                    self.n_rows()
                )));
            }
        }
        self.labels = labels;
        Ok(self)
    }

    /// Rows at the given positions, in the given order, keeping row ids and labels.
    pub fn select_rows(&self, positions: &[usize]) -> Result<Self, DatasetError> {
        let m = self.n_rows();
        if let Some(&bad) = positions.iter().find(|&&p| p >= m) {
            return Err(DatasetError::Shape(format!(
                "row position {bad} out of range 0..{m}"
            )));
        }
        let mut values = Vec::with_capacity(positions.len() * self.n_cols());
        for &p in positions {
            values.extend_from_slice(self.row(p));
        }
        Ok(Self {
            schema: self.schema.clone(),
            values,
            row_ids: positions.iter().map(|&p| self.row_ids[p]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| positions.iter().map(|&p| l[p]).collect()),
        })
    }

    /// Rows with the given ids, in the order given.
    pub fn select_ids(&self, ids: &[u64]) -> Result<Self, DatasetError> {
        let index: std::collections::HashMap<u64, usize> = self
            .row_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();
        let positions = ids
            .iter()
            .map(|id| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| DatasetError::Shape(format!("unknown row id {id}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.select_rows(&positions)
    }

    /// Hex SHA-256 over schema, row ids and values. Labels are excluded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for c in self.schema.columns() {
            h.update(c.name.as_bytes());
            h.update([0u8, c.kind as u8]);
        }
        for id in &self.row_ids {
            h.update(id.to_le_bytes());
        }
        for v in &self.values {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Per-column `(min, max)`.
    pub fn column_ranges(&self) -> Vec<(f64, f64)> {
        (0..self.n_cols())
            .map(|j| {
                self.column(j)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    })
            })
            .collect()
    }
}
