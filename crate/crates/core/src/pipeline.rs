//! End-to-end clustering runs over a content-addressed artifact store.
//!
//! ```text
//! <root>/datasets/<dataset_id>.csv
//! <root>/sessions/<session_id>/manifest.json
//!                             /row_ids.json, order.json, dendrogram.json, forest.json
//!                             /proximity.bin, proximity.json, dissimilarity.bin
//!                             /matrix.png, strips.png
//! <root>/sweeps/<sweep_id>/sweep.json, contact.png
//! ```
//!
//! A session directory is assembled under a temporary name and renamed
//! into place once complete, so readers never see partial artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{
    generate_synthetic, load_csv, read_csv, write_csv, DatasetError, FeatureMatrix, FeatureSchema,
    Scenery, SceneryTemplate,
};
use crate::forest::{train_forest, ClusterForest, ForestConfig, ForestError};
use crate::proximity::{
    build_proximity, to_dissimilarity, CoLeafRule, ProximityError, ProximityMatrix,
};
use crate::render::{
    contact_sheet, encode_png, render_matrix, render_strips, RenderError, RenderSpec,
};
use crate::seriation::{hc_order, linkage, olo_order, Dendrogram, Linkage, SeriationError};

pub const MANIFEST_VERSION: u32 = 1;
const ID_HEX_LEN: usize = 16;

/// Smallest subset that can be clustered.
pub const MIN_SESSION_ROWS: usize = 2;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Proximity(#[from] ProximityError),
    #[error(transparent)]
    Seriation(#[from] SeriationError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("unknown dataset {0}")]
    UnknownDataset(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("range [{lo}, {hi}) is not a selection of at least {MIN_SESSION_ROWS} rows within 0..{size}")]
    BadRange { lo: usize, hi: usize, size: usize },
    #[error("dataset {given} differs from the parent's dataset {parent}")]
    DatasetMismatch { given: String, parent: String },
    #[error("a subset needs both a parent session and a range")]
    IncompleteSubset,
    #[error("sweep needs at least one i_min value")]
    EmptySweep,
}

impl PipelineError {
    /// Stable machine-readable error class.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Dataset(DatasetError::Io { .. }) => "input_not_found",
            PipelineError::Dataset(_) => "invalid_dataset",
            PipelineError::Forest(_) => "invalid_forest_config",
            PipelineError::Proximity(_) => "proximity",
            PipelineError::Seriation(_) => "seriation",
            PipelineError::Render(_) => "render",
            PipelineError::Io { .. } => "io",
            PipelineError::Json { .. } => "corrupt_artifact",
            PipelineError::UnknownDataset(_) => "unknown_dataset",
            PipelineError::UnknownSession(_) => "unknown_session",
            PipelineError::BadRange { .. } => "bad_range",
            PipelineError::DatasetMismatch { .. } => "dataset_mismatch",
            PipelineError::IncompleteSubset => "incomplete_subset",
            PipelineError::EmptySweep => "empty_sweep",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn short_hash(bytes: &[u8]) -> String {
    let mut h = hex::encode(Sha256::digest(bytes));
    h.truncate(ID_HEX_LEN);
    h
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Where the rows of a run come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSpec {
    Csv {
        path: PathBuf,
    },
    Synthetic {
        count_per_template: usize,
        seed: u64,
        #[serde(default = "all_sceneries")]
        sceneries: Vec<Scenery>,
    },
}

fn all_sceneries() -> Vec<Scenery> {
    Scenery::ALL.to_vec()
}

impl InputSpec {
    pub fn load(&self) -> Result<FeatureMatrix, PipelineError> {
        match self {
            InputSpec::Csv { path } => Ok(load_csv(path, &FeatureSchema::scenario())?),
            InputSpec::Synthetic {
                count_per_template,
                seed,
                sceneries,
            } => {
                let templates: Vec<_> = sceneries
                    .iter()
                    .map(|&k| SceneryTemplate::for_kind(k))
                    .collect();
                Ok(generate_synthetic(&templates, *count_per_template, *seed)?)
            }
        }
    }
}

/// Ordered-index block `[lo, hi)` of a parent session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub parent: String,
    pub lo: usize,
    pub hi: usize,
}

/// Everything that determines a session's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRequest {
    /// May be omitted for subsets, which inherit the parent's dataset.
    #[serde(default)]
    pub dataset_id: Option<String>,
    #[serde(default)]
    pub forest: ForestConfig,
    #[serde(default)]
    pub linkage: Linkage,
    #[serde(default)]
    pub olo: bool,
    #[serde(default)]
    pub co_leaf: CoLeafRule,
    #[serde(default)]
    pub render: RenderSpec,
    #[serde(default)]
    pub subset: Option<SubsetSpec>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub train_ms: u64,
    pub proximity_ms: u64,
    pub linkage_ms: u64,
    pub olo_ms: u64,
    pub render_ms: u64,
    pub total_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub session_id: String,
    pub dataset_id: String,
    /// Label-free hash of the rows this session clustered.
    pub feature_hash: String,
    pub n_rows: usize,
    pub subset: Option<SubsetSpec>,
    pub forest: ForestConfig,
    pub linkage: Linkage,
    pub olo: bool,
    pub co_leaf: CoLeafRule,
    pub render: RenderSpec,
    pub dendrogram_conventions: String,
    /// File name → hex SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
    pub timings: Timings,
}

/// Leaf orders as positions into the session's rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderDocument {
    pub hc: Vec<usize>,
    pub olo: Option<Vec<usize>>,
    /// The order used for display: OLO when computed, HC otherwise.
    #[serde(rename = "final")]
    pub final_order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProximitySidecar {
    pub size: usize,
    pub trees: u32,
    pub layout: String,
    pub forest_hash: String,
    pub dataset_hash: String,
    pub proximity_sha256: String,
    pub dissimilarity_sha256: String,
}

/// In-memory result of a session, enough to serve tiles and strips.
#[derive(Debug, Clone)]
pub struct SessionResult {
    pub manifest: Manifest,
    pub matrix: FeatureMatrix,
    pub proximity: ProximityMatrix,
    pub order: OrderDocument,
    pub dendrogram: Dendrogram,
}

impl SessionResult {
    pub fn id(&self) -> &str {
        &self.manifest.session_id
    }

    /// Dataset row ids in display order.
    pub fn ordered_row_ids(&self) -> Vec<u64> {
        self.order
            .final_order
            .iter()
            .map(|&p| self.matrix.row_ids()[p])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDocument {
    pub sweep_id: String,
    pub i_min: Vec<f64>,
    pub sessions: Vec<String>,
}

/// Rows and identity of a session before anything is trained.
#[derive(Debug, Clone)]
pub struct PreparedSession {
    pub session_id: String,
    pub dataset_id: String,
    pub matrix: FeatureMatrix,
    pub request: SessionRequest,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let root = root.into();
        for sub in ["datasets", "sessions", "sweeps"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dataset_path(&self, id: &str) -> PathBuf {
        self.root.join("datasets").join(format!("{id}.csv"))
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    fn valid_id(id: &str) -> bool {
        id.len() == ID_HEX_LEN && id.bytes().all(|b| b.is_ascii_hexdigit())
    }

    /// Stores the canonical CSV form of `matrix`; the id hashes those bytes,
    /// so re-adding the same content returns the same id. The flag is true
    /// when the dataset was not stored before.
    pub fn put_dataset(&self, matrix: &FeatureMatrix) -> Result<(String, bool), PipelineError> {
        let mut bytes = Vec::new();
        write_csv(matrix, &mut bytes)?;
        let id = short_hash(&bytes);
        let path = self.dataset_path(&id);
        if path.exists() {
            return Ok((id, false));
        }
        let tmp = self
            .root
            .join("datasets")
            .join(format!(".{id}.{}.tmp", std::process::id()));
        fs::write(&tmp, &bytes).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok((id, true))
    }

    /// Parses and validates an uploaded CSV, then stores it.
    pub fn put_dataset_csv(
        &self,
        bytes: &[u8],
    ) -> Result<(String, bool, FeatureMatrix), PipelineError> {
        let matrix = read_csv(bytes, &FeatureSchema::scenario())?;
        let (id, created) = self.put_dataset(&matrix)?;
        Ok((id, created, matrix))
    }

    pub fn has_dataset(&self, id: &str) -> bool {
        Self::valid_id(id) && self.dataset_path(id).is_file()
    }

    pub fn load_dataset(&self, id: &str) -> Result<FeatureMatrix, PipelineError> {
        if !self.has_dataset(id) {
            return Err(PipelineError::UnknownDataset(id.to_owned()));
        }
        Ok(load_csv(self.dataset_path(id), &FeatureSchema::scenario())?)
    }

    pub fn has_session(&self, id: &str) -> bool {
        Self::valid_id(id) && self.session_dir(id).join("manifest.json").is_file()
    }

    fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        serde_json::from_slice(&bytes).map_err(|source| PipelineError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_manifest(&self, id: &str) -> Result<Manifest, PipelineError> {
        if !self.has_session(id) {
            return Err(PipelineError::UnknownSession(id.to_owned()));
        }
        Self::read_json(&self.session_dir(id).join("manifest.json"))
    }

    pub fn load_order(&self, id: &str) -> Result<OrderDocument, PipelineError> {
        if !self.has_session(id) {
            return Err(PipelineError::UnknownSession(id.to_owned()));
        }
        Self::read_json(&self.session_dir(id).join("order.json"))
    }

    pub fn load_row_ids(&self, id: &str) -> Result<Vec<u64>, PipelineError> {
        if !self.has_session(id) {
            return Err(PipelineError::UnknownSession(id.to_owned()));
        }
        Self::read_json(&self.session_dir(id).join("row_ids.json"))
    }

    pub fn load_forest(&self, id: &str) -> Result<ClusterForest, PipelineError> {
        let path = self.session_dir(id).join("forest.json");
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        Ok(ClusterForest::from_json(&bytes)?)
    }

    /// Reloads a finished session into memory.
    pub fn load_session(&self, id: &str) -> Result<SessionResult, PipelineError> {
        let manifest = self.load_manifest(id)?;
        let dir = self.session_dir(id);
        let row_ids = self.load_row_ids(id)?;
        let order = self.load_order(id)?;
        let dendrogram: Dendrogram = Self::read_json(&dir.join("dendrogram.json"))?;
        let sidecar: ProximitySidecar = Self::read_json(&dir.join("proximity.json"))?;
        let dataset = self.load_dataset(&manifest.dataset_id)?;
        let matrix = dataset.select_ids(&row_ids)?;
        let path = dir.join("proximity.bin");
        let file = fs::File::open(&path).map_err(io_err(&path))?;
        let proximity = ProximityMatrix::read_f32(
            std::io::BufReader::new(file),
            sidecar.trees,
            row_ids,
            crate::proximity::Provenance {
                forest_hash: sidecar.forest_hash,
                dataset_hash: sidecar.dataset_hash,
            },
        )?;
        Ok(SessionResult {
            manifest,
            matrix,
            proximity,
            order,
            dendrogram,
        })
    }

    /// Resolves the rows of a request and derives its session id without
    /// running anything.
    pub fn prepare(&self, request: &SessionRequest) -> Result<PreparedSession, PipelineError> {
        request.forest.validate()?;
        let (dataset_id, matrix) = match &request.subset {
            None => {
                let id = request
                    .dataset_id
                    .clone()
                    .ok_or(PipelineError::IncompleteSubset)?;
                let m = self.load_dataset(&id)?;
                (id, m)
            }
            Some(sub) => {
                let parent = self.load_manifest(&sub.parent)?;
                if let Some(given) = &request.dataset_id {
                    if *given != parent.dataset_id {
                        return Err(PipelineError::DatasetMismatch {
                            given: given.clone(),
                            parent: parent.dataset_id,
                        });
                    }
                }
                let order = self.load_order(&sub.parent)?;
                let rows = self.load_row_ids(&sub.parent)?;
                let size = rows.len();
                if sub.lo >= sub.hi || sub.hi > size || sub.hi - sub.lo < MIN_SESSION_ROWS {
                    return Err(PipelineError::BadRange {
                        lo: sub.lo,
                        hi: sub.hi,
                        size,
                    });
                }
                let ids: Vec<u64> = order.final_order[sub.lo..sub.hi]
                    .iter()
                    .map(|&p| rows[p])
                    .collect();
                let m = self.load_dataset(&parent.dataset_id)?.select_ids(&ids)?;
                (parent.dataset_id, m)
            }
        };
        // labels only reach the strip image, but that image is an artifact too
        let labels = matrix.labels().map(|l| short_hash(&json(&l)));
        let key = serde_json::json!({
            "feature_hash": matrix.content_hash(),
            "labels": labels,
            "forest": request.forest,
            "linkage": request.linkage,
            "olo": request.olo,
            "co_leaf": request.co_leaf,
            "render": request.render,
            "subset": request.subset,
        });
        let session_id = short_hash(key.to_string().as_bytes());
        let request = SessionRequest {
            dataset_id: Some(dataset_id.clone()),
            ..request.clone()
        };
        Ok(PreparedSession {
            session_id,
            dataset_id,
            matrix,
            request,
        })
    }

    /// Runs a session, or loads it when an identical one already exists.
    pub fn run(&self, request: &SessionRequest) -> Result<SessionResult, PipelineError> {
        let prepared = self.prepare(request)?;
        if self.has_session(&prepared.session_id) {
            log::info!("session {} already exists", prepared.session_id);
            return self.load_session(&prepared.session_id);
        }
        self.execute(prepared)
    }

    /// Trains, seriates and renders a prepared session, then publishes
    /// its directory atomically.
    pub fn execute(&self, prepared: PreparedSession) -> Result<SessionResult, PipelineError> {
        let PreparedSession {
            session_id,
            dataset_id,
            matrix,
            request,
        } = prepared;
        let started = Instant::now();
        let mut timings = Timings::default();
        let lap = |t: &mut Instant| {
            let ms = t.elapsed().as_millis() as u64;
            *t = Instant::now();
            ms
        };
        let mut t = Instant::now();

        log::info!(
            "session {session_id}: training {} trees on {} rows",
            request.forest.trees,
            matrix.n_rows()
        );
        let forest = train_forest(&matrix, &request.forest)?;
        timings.train_ms = lap(&mut t);
        let proximity = build_proximity(&forest, &matrix, request.co_leaf)?;
        let dissimilarity = to_dissimilarity(&proximity);
        timings.proximity_ms = lap(&mut t);
        let dendrogram = linkage(&dissimilarity, request.linkage)?;
        let hc = hc_order(&dendrogram);
        timings.linkage_ms = lap(&mut t);
        let olo = request.olo.then(|| olo_order(&dendrogram, &dissimilarity));
        timings.olo_ms = lap(&mut t);
        let final_order = olo.clone().unwrap_or_else(|| hc.clone());
        let order = OrderDocument {
            hc,
            olo,
            final_order,
        };

        let mut spec = request.render.clone();
        spec.type_row &= matrix.labels().is_some();
        let matrix_png = encode_png(&render_matrix(&proximity, &order.final_order, &spec)?)?;
        let strips_png = encode_png(&render_strips(&matrix, &order.final_order, &spec)?)?;
        timings.render_ms = lap(&mut t);

        let sessions = self.root.join("sessions");
        let tmp = tempfile_dir(&sessions, &session_id)?;
        let result = (|| {
            let mut artifacts = BTreeMap::new();
            let mut put = |name: &str, bytes: &[u8]| -> Result<(), PipelineError> {
                let path = tmp.join(name);
                fs::write(&path, bytes).map_err(io_err(&path))?;
                artifacts.insert(name.to_owned(), sha256_hex(bytes));
                Ok(())
            };
            put("row_ids.json", &json(&matrix.row_ids().to_vec()))?;
            put("forest.json", &forest.to_json()?)?;
            let mut p_bytes = Vec::with_capacity(proximity.size() * proximity.size() * 4);
            proximity
                .write_f32(&mut p_bytes)
                .expect("writing to memory");
            let mut d_bytes = Vec::with_capacity(p_bytes.len());
            dissimilarity
                .write_f32(&mut d_bytes)
                .expect("writing to memory");
            let sidecar = ProximitySidecar {
                size: proximity.size(),
                trees: proximity.trees(),
                layout: "row-major little-endian f32, unordered rows as in row_ids.json".into(),
                forest_hash: proximity.provenance.forest_hash.clone(),
                dataset_hash: proximity.provenance.dataset_hash.clone(),
                proximity_sha256: sha256_hex(&p_bytes),
                dissimilarity_sha256: sha256_hex(&d_bytes),
            };
            put("proximity.bin", &p_bytes)?;
            drop(p_bytes);
            put("dissimilarity.bin", &d_bytes)?;
            drop(d_bytes);
            put("proximity.json", &json(&sidecar))?;
            put("dendrogram.json", &json(&dendrogram))?;
            put("order.json", &json(&order))?;
            put("matrix.png", &matrix_png)?;
            put("strips.png", &strips_png)?;

            timings.total_ms = started.elapsed().as_millis() as u64;
            let manifest = Manifest {
                version: MANIFEST_VERSION,
                session_id: session_id.clone(),
                dataset_id: dataset_id.clone(),
                feature_hash: matrix.content_hash(),
                n_rows: matrix.n_rows(),
                subset: request.subset.clone(),
                forest: request.forest.clone(),
                linkage: request.linkage,
                olo: request.olo,
                co_leaf: request.co_leaf,
                render: request.render.clone(),
                dendrogram_conventions: dendrogram.conventions.clone(),
                artifacts,
                timings,
            };
            let path = tmp.join("manifest.json");
            let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
            fs::write(&path, bytes).map_err(io_err(&path))?;
            Ok(manifest)
        })();
        let manifest = match result {
            Ok(m) => m,
            Err(e) => {
                let _ = fs::remove_dir_all(&tmp);
                return Err(e);
            }
        };
        let dest = self.session_dir(&session_id);
        if let Err(e) = fs::rename(&tmp, &dest) {
            let _ = fs::remove_dir_all(&tmp);
            // another writer published the same session first
            if !self.has_session(&session_id) {
                return Err(io_err(&dest)(e));
            }
        }
        log::info!("session {session_id} done in {} ms", timings.total_ms);
        Ok(SessionResult {
            manifest,
            matrix,
            proximity,
            order,
            dendrogram,
        })
    }

    /// One session per `i_min`, same data and seed, plus a contact sheet of
    /// the matrix images.
    pub fn sweep(
        &self,
        base: &SessionRequest,
        i_mins: &[f64],
    ) -> Result<(SweepDocument, Vec<SessionResult>), PipelineError> {
        if i_mins.is_empty() {
            return Err(PipelineError::EmptySweep);
        }
        let mut results = Vec::with_capacity(i_mins.len());
        for &i_min in i_mins {
            let req = SessionRequest {
                forest: ForestConfig {
                    i_min,
                    ..base.forest.clone()
                },
                ..base.clone()
            };
            results.push(self.run(&req)?);
        }
        let sessions: Vec<String> = results.iter().map(|r| r.id().to_owned()).collect();
        let sweep_id = short_hash(sessions.join(",").as_bytes());
        let dir = self.root.join("sweeps").join(&sweep_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut panels = Vec::with_capacity(results.len());
        for (r, i_min) in results.iter().zip(i_mins) {
            let path = self.session_dir(r.id()).join("matrix.png");
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let img = image::load_from_memory(&bytes)
                .map_err(RenderError::from)?
                .to_rgb8();
            panels.push((format!("I_MIN={i_min}"), img));
        }
        let sheet = encode_png(&contact_sheet(&panels, 8))?;
        let path = dir.join("contact.png");
        fs::write(&path, sheet).map_err(io_err(&path))?;
        let doc = SweepDocument {
            sweep_id,
            i_min: i_mins.to_vec(),
            sessions,
        };
        let path = dir.join("sweep.json");
        fs::write(
            &path,
            serde_json::to_vec_pretty(&doc).expect("sweep serializes"),
        )
        .map_err(io_err(&path))?;
        Ok((doc, results))
    }
}

fn tempfile_dir(parent: &Path, id: &str) -> Result<PathBuf, PipelineError> {
    for n in 0u32.. {
        let path = parent.join(format!(".{id}.{}.{n}.tmp", std::process::id()));
        match fs::create_dir(&path) {
            Ok(()) => return Ok(path),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io_err(&path)(e)),
        }
    }
    unreachable!("u32 range exhausted")
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("artifact serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_request(store: &Store) -> SessionRequest {
        let m = InputSpec::Synthetic {
            count_per_template: 20,
            seed: 3,
            sceneries: all_sceneries(),
        }
        .load()
        .unwrap();
        let (id, created) = store.put_dataset(&m).unwrap();
        assert!(created);
        SessionRequest {
            dataset_id: Some(id),
            forest: ForestConfig {
                trees: 10,
                seed: 5,
                ..ForestConfig::default()
            },
            linkage: Linkage::Average,
            olo: true,
            co_leaf: CoLeafRule::AnyLeaf,
            render: RenderSpec::default(),
            subset: None,
        }
    }

    #[test]
    fn run_writes_full_artifact_set() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let req = small_request(&store);
        let r = store.run(&req).unwrap();
        let names: Vec<_> = r.manifest.artifacts.keys().cloned().collect();
        assert_eq!(
            names,
            [
                "dendrogram.json",
                "dissimilarity.bin",
                "forest.json",
                "matrix.png",
                "order.json",
                "proximity.bin",
                "proximity.json",
                "row_ids.json",
                "strips.png"
            ]
        );
        for (name, hash) in &r.manifest.artifacts {
            let bytes = fs::read(store.session_dir(r.id()).join(name)).unwrap();
            assert_eq!(&sha256_hex(&bytes), hash, "{name}");
        }
        let again = store.run(&req).unwrap();
        assert_eq!(again.manifest, r.manifest);
        assert_eq!(again.proximity, r.proximity);
        let leftovers = fs::read_dir(store.root().join("sessions"))
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .file_name()
                    .to_string_lossy()
                    .starts_with('.')
            })
            .count();
        assert_eq!(leftovers, 0);
    }

    #[test]
    fn subset_maps_rows_through_parent_order() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let req = small_request(&store);
        let parent = store.run(&req).unwrap();
        let child_req = SessionRequest {
            dataset_id: None,
            subset: Some(SubsetSpec {
                parent: parent.id().to_owned(),
                lo: 10,
                hi: 40,
            }),
            ..req.clone()
        };
        let child = store.run(&child_req).unwrap();
        assert_eq!(child.matrix.n_rows(), 30);
        assert_eq!(child.matrix.row_ids(), &parent.ordered_row_ids()[10..40]);
        assert_eq!(child.manifest.dataset_id, parent.manifest.dataset_id);

        for (lo, hi) in [(0, 0), (5, 4), (0, 61), (7, 8)] {
            let bad = SessionRequest {
                subset: Some(SubsetSpec {
                    parent: parent.id().into(),
                    lo,
                    hi,
                }),
                ..req.clone()
            };
            assert!(
                matches!(store.run(&bad), Err(PipelineError::BadRange { .. })),
                "{lo}..{hi}"
            );
        }
        let orphan = SessionRequest {
            subset: Some(SubsetSpec {
                parent: "0123456789abcdef".into(),
                lo: 0,
                hi: 5,
            }),
            ..req
        };
        assert!(matches!(
            store.run(&orphan),
            Err(PipelineError::UnknownSession(_))
        ));
    }

    #[test]
    fn dataset_ids_are_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let text = "v_eg_t-2,v_eg_t0,b_eg,v_tg_t-2,v_tg_t0,b_tg,delta_rel,r,v_lim,n_L\n1,1,0,2,2,1,45,100,13.89,2\n2,1,1,2,2,1,45,100,13.89,2\n";
        let (a, created_a, _) = store.put_dataset_csv(text.as_bytes()).unwrap();
        let spaced = text.replace(',', " , ");
        let (b, created_b, _) = store.put_dataset_csv(spaced.as_bytes()).unwrap();
        assert_eq!(a, b);
        assert!(created_a && !created_b);
        assert!(store.has_dataset(&a));
        assert!(!store.has_dataset("../etc/passwd"));
        assert!(matches!(
            store.load_dataset("ffffffffffffffff"),
            Err(PipelineError::UnknownDataset(_))
        ));
    }
}
