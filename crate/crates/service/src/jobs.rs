//! In-memory job table. Finished sessions live in the store, so only
//! queued, running and failed jobs need tracking across requests.

use std::collections::HashMap;
use std::fmt;
use std::sync::Mutex;

use scenclust_core::pipeline::SubsetSpec;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Queued,
    Running,
    Done,
    Failed,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Queued => "queued",
            Status::Running => "running",
            Status::Done => "done",
            Status::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Job {
    pub status: Status,
    pub error: Option<String>,
    pub dataset_id: String,
    pub n_rows: usize,
    pub subset: Option<SubsetSpec>,
}

#[derive(Debug, Default)]
pub struct JobTable {
    jobs: Mutex<HashMap<String, Job>>,
}

impl JobTable {
    pub fn get(&self, id: &str) -> Option<Job> {
        self.lock().get(id).cloned()
    }

    /// Registers a queued job unless one with this id is already pending or
    /// done. Failed jobs are replaced so a retry re-runs them.
    pub fn enqueue(&self, id: &str, job: Job) -> Result<(), Job> {
        let mut jobs = self.lock();
        if let Some(existing) = jobs.get(id) {
            if existing.status != Status::Failed {
                return Err(existing.clone());
            }
        }
        jobs.insert(id.to_owned(), job);
        Ok(())
    }

    pub fn set(&self, id: &str, status: Status, error: Option<String>) {
        if let Some(job) = self.lock().get_mut(id) {
            job.status = status;
            job.error = error;
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, Job>> {
        self.jobs.lock().unwrap_or_else(|e| e.into_inner())
    }
}
