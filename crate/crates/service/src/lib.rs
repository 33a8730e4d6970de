//! Session-oriented HTTP API over a local artifact store.
//!
//! All routes live under `/v1`. Clustering runs are asynchronous: creating a
//! session enqueues a job on a bounded worker pool and clients poll its
//! status before fetching tiles, strips, orders or the dendrogram.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;
use scenclust_core::pipeline::{PipelineError, PreparedSession, SessionResult, Store};
use tokio::sync::Semaphore;

mod error;
mod jobs;
mod routes;

pub use error::ApiError;
pub use jobs::Status;

/// Largest accepted request body (CSV uploads).
pub const MAX_BODY_BYTES: usize = 256 * 1024 * 1024;
const CACHED_SESSIONS: usize = 4;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub store_root: PathBuf,
    pub workers: usize,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    store: Store,
    jobs: jobs::JobTable,
    workers: Arc<Semaphore>,
    loaded: Mutex<VecDeque<Arc<SessionResult>>>,
}

impl AppState {
    /// A pool of zero workers holds every job in `queued` until
    /// [`AppState::add_workers`] is called.
    pub fn new(config: &ServiceConfig) -> Result<Self, PipelineError> {
        Ok(Self {
            inner: Arc::new(Inner {
                store: Store::open(&config.store_root)?,
                jobs: jobs::JobTable::default(),
                workers: Arc::new(Semaphore::new(config.workers)),
                loaded: Mutex::new(VecDeque::new()),
            }),
        })
    }

    pub fn add_workers(&self, n: usize) {
        self.inner.workers.add_permits(n);
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }

    pub fn status(&self, id: &str) -> Option<Status> {
        match self.inner.jobs.get(id) {
            Some(job) => Some(job.status),
            None if self.inner.store.has_session(id) => Some(Status::Done),
            None => None,
        }
    }

    /// Fails with 404 for unknown ids and 409 for unfinished sessions.
    pub fn require_done(&self, id: &str) -> Result<(), ApiError> {
        match self.status(id) {
            Some(Status::Done) => Ok(()),
            Some(status) => Err(ApiError::NotReady {
                id: id.to_owned(),
                status,
            }),
            None => Err(PipelineError::UnknownSession(id.to_owned()).into()),
        }
    }

    /// Finished session held in memory for tile requests; a few recent
    /// sessions are kept.
    pub async fn loaded(&self, id: &str) -> Result<Arc<SessionResult>, ApiError> {
        self.require_done(id)?;
        if let Some(hit) = self.cache().iter().find(|r| r.id() == id) {
            return Ok(hit.clone());
        }
        let state = self.clone();
        let owned = id.to_owned();
        let result = Arc::new(
            tokio::task::spawn_blocking(move || state.inner.store.load_session(&owned)).await??,
        );
        let mut cache = self.cache();
        if !cache.iter().any(|r| r.id() == id) {
            if cache.len() == CACHED_SESSIONS {
                cache.pop_front();
            }
            cache.push_back(result.clone());
        }
        Ok(result)
    }

    fn cache(&self) -> std::sync::MutexGuard<'_, VecDeque<Arc<SessionResult>>> {
        self.inner.loaded.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn spawn_job(&self, prepared: PreparedSession) {
        let state = self.clone();
        tokio::spawn(async move {
            let id = prepared.session_id.clone();
            let _permit = state
                .inner
                .workers
                .clone()
                .acquire_owned()
                .await
                .expect("worker pool is never closed");
            state.inner.jobs.set(&id, Status::Running, None);
            log::info!("session {id} running");
            let worker = state.clone();
            let outcome =
                tokio::task::spawn_blocking(move || worker.inner.store.execute(prepared)).await;
            let error = match outcome {
                Ok(Ok(_)) => None,
                Ok(Err(e)) => Some(e.to_string()),
                Err(e) => Some(e.to_string()),
            };
            match &error {
                None => log::info!("session {id} done"),
                Some(e) => log::warn!("session {id} failed: {e}"),
            }
            let status = if error.is_none() {
                Status::Done
            } else {
                Status::Failed
            };
            state.inner.jobs.set(&id, status, error);
        });
    }
}

pub fn router(state: AppState) -> Router {
    let v1 = Router::new()
        .route("/datasets", post(routes::upload_dataset))
        .route("/sessions", post(routes::create_session))
        .route("/sessions/{id}", get(routes::session_status))
        .route("/sessions/{id}/matrix", get(routes::matrix_tile))
        .route("/sessions/{id}/values", get(routes::matrix_values))
        .route("/sessions/{id}/strips", get(routes::strips))
        .route("/sessions/{id}/order", get(routes::order))
        .route("/sessions/{id}/dendrogram", get(routes::dendrogram))
        .route("/sessions/{id}/meta", get(routes::meta));
    Router::new()
        .nest("/v1", v1)
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}
