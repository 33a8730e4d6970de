use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use scenclust_core::dataset::Column;
use scenclust_core::forest::ForestConfig;
use scenclust_core::pipeline::{Manifest, PipelineError, SessionRequest, SubsetSpec};
use scenclust_core::proximity::CoLeafRule;
use scenclust_core::render::{
    encode_png, render_window, render_window_scaled, MatrixWindow, RenderSpec,
};
use scenclust_core::seriation::Linkage;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::jobs::Job;
use crate::{ApiError, AppState, Status};

const DEFAULT_TILE_PX: u32 = 512;
const MAX_TILE_PX: u32 = 4096;
/// Cap on raw values returned for hover lookups.
const MAX_VALUE_CELLS: usize = 64 * 64;

#[derive(Serialize)]
struct DatasetCreated {
    id: String,
    created: bool,
    n_rows: usize,
    labeled: bool,
    schema: Vec<Column>,
}

pub async fn upload_dataset(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let worker = state.clone();
    let (id, created, matrix) =
        tokio::task::spawn_blocking(move || worker.store().put_dataset_csv(&body)).await??;
    log::info!("dataset {id}: {} rows, new: {created}", matrix.n_rows());
    let code = if created {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    let doc = DatasetCreated {
        id,
        created,
        n_rows: matrix.n_rows(),
        labeled: matrix.labels().is_some(),
        schema: matrix.schema().columns().to_vec(),
    };
    Ok((code, Json(doc)).into_response())
}

/// Session creation body. A child session names its parent and an
/// ordered-index range `[lo, hi)` of that parent.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    dataset_id: Option<String>,
    i_min: Option<f64>,
    trees: Option<usize>,
    m_min: Option<usize>,
    seed: Option<u64>,
    subspace_size: Option<usize>,
    linkage: Option<Linkage>,
    olo: Option<bool>,
    co_leaf: Option<CoLeafRule>,
    render: Option<RenderSpec>,
    parent: Option<String>,
    range: Option<[usize; 2]>,
}

impl CreateSession {
    fn into_request(self) -> Result<SessionRequest, ApiError> {
        let subset = match (self.parent, self.range) {
            (Some(parent), Some([lo, hi])) => Some(SubsetSpec { parent, lo, hi }),
            (None, None) => None,
            _ => return Err(PipelineError::IncompleteSubset.into()),
        };
        if subset.is_none() && self.dataset_id.is_none() {
            return Err(ApiError::BadRequest(
                "dataset_id is required for a root session".into(),
            ));
        }
        let d = ForestConfig::default();
        Ok(SessionRequest {
            dataset_id: self.dataset_id,
            forest: ForestConfig {
                trees: self.trees.unwrap_or(d.trees),
                i_min: self.i_min.unwrap_or(d.i_min),
                m_min: self.m_min.unwrap_or(d.m_min),
                seed: self.seed.unwrap_or(d.seed),
                subspace_size: self.subspace_size,
            },
            linkage: self.linkage.unwrap_or_default(),
            olo: self.olo.unwrap_or(false),
            co_leaf: self.co_leaf.unwrap_or_default(),
            render: self.render.unwrap_or_default(),
            subset,
        })
    }
}

fn session_doc(id: &str, status: Status, job: &Job) -> Value {
    json!({
        "id": id,
        "status": status,
        "error": job.error,
        "dataset_id": job.dataset_id,
        "n_rows": job.n_rows,
        "parent": job.subset,
    })
}

fn job_of(m: &Manifest) -> Job {
    Job {
        status: Status::Done,
        error: None,
        dataset_id: m.dataset_id.clone(),
        n_rows: m.n_rows,
        subset: m.subset.clone(),
    }
}

/// Enqueues a session, or returns the existing one for an identical request.
pub async fn create_session(
    State(state): State<AppState>,
    Json(body): Json<CreateSession>,
) -> Result<Response, ApiError> {
    let request = body.into_request()?;
    if let Some(sub) = &request.subset {
        state.require_done(&sub.parent)?;
    }
    let worker = state.clone();
    let prepared = tokio::task::spawn_blocking(move || worker.store().prepare(&request)).await??;
    let id = prepared.session_id.clone();
    if state.store().has_session(&id) {
        let manifest = state.store().load_manifest(&id)?;
        let doc = session_doc(&id, Status::Done, &job_of(&manifest));
        return Ok((StatusCode::OK, Json(doc)).into_response());
    }
    let job = Job {
        status: Status::Queued,
        error: None,
        dataset_id: prepared.dataset_id.clone(),
        n_rows: prepared.matrix.n_rows(),
        subset: prepared.request.subset.clone(),
    };
    match state.inner.jobs.enqueue(&id, job.clone()) {
        Ok(()) => {
            log::info!("session {id} queued");
            state.spawn_job(prepared);
            Ok((
                StatusCode::ACCEPTED,
                Json(session_doc(&id, Status::Queued, &job)),
            )
                .into_response())
        }
        Err(existing) => {
            let doc = session_doc(&id, existing.status, &existing);
            Ok((StatusCode::OK, Json(doc)).into_response())
        }
    }
}

pub async fn session_status(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    if let Some(job) = state.inner.jobs.get(&id) {
        return Ok(Json(session_doc(&id, job.status, &job)));
    }
    let manifest = state.store().load_manifest(&id)?;
    Ok(Json(session_doc(&id, Status::Done, &job_of(&manifest))))
}

#[derive(Debug, Deserialize)]
pub struct WindowQuery {
    x0: Option<usize>,
    y0: Option<usize>,
    x1: Option<usize>,
    y1: Option<usize>,
    /// Longest tile side in pixels.
    px: Option<u32>,
    /// Matrix entries per pixel; overrides `px` so neighbouring tiles share
    /// one downsampling grid.
    scale: Option<usize>,
}

impl WindowQuery {
    fn window(&self, size: usize) -> Result<MatrixWindow, ApiError> {
        let w = MatrixWindow {
            x0: self.x0.unwrap_or(0),
            y0: self.y0.unwrap_or(0),
            x1: self.x1.unwrap_or(size),
            y1: self.y1.unwrap_or(size),
        };
        w.validate(size)
            .map_err(|e| ApiError::BadWindow(e.to_string()))?;
        Ok(w)
    }
}

/// PNG of an ordered-index window. Pixel `(u, v)` covers columns
/// `x0 + u·scale ..` and rows `y0 + v·scale ..`, clipped to the window;
/// the `x-tile-*` headers carry that mapping.
pub async fn matrix_tile(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<WindowQuery>,
) -> Result<Response, ApiError> {
    let session = state.loaded(&id).await?;
    let size = session.proximity.size();
    let window = q.window(size)?;
    let px = q.px.unwrap_or(DEFAULT_TILE_PX);
    if px == 0 || px > MAX_TILE_PX || q.scale == Some(0) {
        return Err(ApiError::BadWindow(format!(
            "px must be in 1..={MAX_TILE_PX} and scale at least 1"
        )));
    }
    if let Some(scale) = q.scale {
        if window.width().max(window.height()).div_ceil(scale) > MAX_TILE_PX as usize {
            return Err(ApiError::BadWindow(format!(
                "scale {scale} gives a tile wider than {MAX_TILE_PX} px"
            )));
        }
    }
    let (png, geo) = tokio::task::spawn_blocking(move || {
        let s = &session;
        let spec = &s.manifest.render;
        let order = &s.order.final_order;
        let (img, geo) = match q.scale {
            Some(f) => render_window_scaled(
                &s.proximity,
                order,
                window,
                f,
                spec.downsample,
                &spec.colormap,
            )?,
            None => render_window(
                &s.proximity,
                order,
                window,
                px,
                spec.downsample,
                &spec.colormap,
            )?,
        };
        Ok::<_, ApiError>((encode_png(&img)?, geo))
    })
    .await??;
    let w = geo.window;
    let headers = [
        (header::CONTENT_TYPE.as_str(), "image/png".to_owned()),
        ("x-matrix-size", size.to_string()),
        ("x-tile-x0", w.x0.to_string()),
        ("x-tile-y0", w.y0.to_string()),
        ("x-tile-x1", w.x1.to_string()),
        ("x-tile-y1", w.y1.to_string()),
        ("x-tile-scale", geo.factor.to_string()),
    ];
    Ok((headers, png).into_response())
}

/// Raw proximities of a small window, for hover readouts.
pub async fn matrix_values(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<WindowQuery>,
) -> Result<Json<Value>, ApiError> {
    let session = state.loaded(&id).await?;
    let w = q.window(session.proximity.size())?;
    if w.width() * w.height() > MAX_VALUE_CELLS {
        return Err(ApiError::BadWindow(format!(
            "at most {MAX_VALUE_CELLS} values per request"
        )));
    }
    let order = &session.order.final_order;
    let ids = session.proximity.row_ids();
    let values: Vec<Vec<f64>> = (w.y0..w.y1)
        .map(|y| {
            (w.x0..w.x1)
                .map(|x| session.proximity.get(order[y], order[x]))
                .collect()
        })
        .collect();
    Ok(Json(json!({
        "window": w,
        "column_row_ids": order[w.x0..w.x1].iter().map(|&i| ids[i]).collect::<Vec<_>>(),
        "row_row_ids": order[w.y0..w.y1].iter().map(|&i| ids[i]).collect::<Vec<_>>(),
        "values": values,
    })))
}

async fn artifact(state: &AppState, id: &str, name: &str) -> Result<Vec<u8>, ApiError> {
    state.require_done(id)?;
    let path = state.store().session_dir(id).join(name);
    tokio::fs::read(&path).await.map_err(|source| {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
        .into()
    })
}

pub async fn strips(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let png = artifact(&state, &id, "strips.png").await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

pub async fn dendrogram(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let doc = artifact(&state, &id, "dendrogram.json").await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], doc).into_response())
}

/// Row ids in display order, plus the positions into the session's rows.
pub async fn order(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    state.require_done(&id)?;
    let order = state.store().load_order(&id)?;
    let rows = state.store().load_row_ids(&id)?;
    let ordered: Vec<u64> = order.final_order.iter().map(|&p| rows[p]).collect();
    Ok(Json(json!({
        "row_ids": ordered,
        "positions": order.final_order,
        "olo": order.olo.is_some(),
    })))
}

/// Manifest plus the lineage from the root session down to this one.
pub async fn meta(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    state.require_done(&id)?;
    let manifest = state.store().load_manifest(&id)?;
    let mut lineage = vec![json!({ "session_id": id, "range": null })];
    let mut cursor = manifest.subset.clone();
    while let Some(sub) = cursor {
        if let Some(last) = lineage.last_mut() {
            last["range"] = json!([sub.lo, sub.hi]);
        }
        lineage.push(json!({ "session_id": sub.parent, "range": null }));
        cursor = state.store().load_manifest(&sub.parent)?.subset;
    }
    lineage.reverse();
    Ok(Json(json!({
        "id": id,
        "dataset_id": manifest.dataset_id,
        "n_rows": manifest.n_rows,
        "parent": manifest.subset,
        "lineage": lineage,
        "forest": manifest.forest,
        "linkage": manifest.linkage,
        "olo": manifest.olo,
        "co_leaf": manifest.co_leaf,
        "render": manifest.render,
        "timings": manifest.timings,
        "artifacts": manifest.artifacts,
    })))
}
