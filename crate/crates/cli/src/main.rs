use std::process::ExitCode;

use clap::Parser;
use scenclust_core::pipeline::{PipelineError, SessionRequest, SessionResult, Store};
use serde_json::{json, Value};
use thiserror::Error;

mod config;

use config::{Args, Plan};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("config {path}: {message}")]
    Config { path: String, message: String },
    #[error("no input: pass --input, --synthetic, a config input, or --subset")]
    NoInput,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Pipeline(e) => e.kind(),
            CliError::Config { .. } => "invalid_config",
            CliError::NoInput => "missing_input",
        }
    }
}

fn session_summary(store: &Store, r: &SessionResult) -> Value {
    let m = &r.manifest;
    json!({
        "session_id": m.session_id,
        "dataset_id": m.dataset_id,
        "dir": store.session_dir(&m.session_id),
        "n_rows": m.n_rows,
        "i_min": m.forest.i_min,
        "subset": m.subset,
        "artifacts": m.artifacts,
        "timings": m.timings,
    })
}

fn execute(plan: Plan) -> Result<Value, CliError> {
    // fail on bad settings or input before touching the store
    plan.request
        .forest
        .validate()
        .map_err(PipelineError::from)?;
    let matrix = plan.input.as_ref().map(|i| i.load()).transpose()?;
    let store = Store::open(&plan.out)?;
    let dataset_id = match &matrix {
        Some(m) => {
            let (id, created) = store.put_dataset(m)?;
            log::info!(
                "dataset {id}: {} rows{}",
                m.n_rows(),
                if created { "" } else { " (already stored)" }
            );
            Some(id)
        }
        None => None,
    };
    let request = SessionRequest {
        dataset_id,
        ..plan.request
    };
    match plan.sweep {
        Some(i_mins) => {
            let (doc, results) = store.sweep(&request, &i_mins)?;
            let sessions: Vec<Value> = results.iter().map(|r| session_summary(&store, r)).collect();
            Ok(json!({
                "sweep_id": doc.sweep_id,
                "dir": store.root().join("sweeps").join(&doc.sweep_id),
                "sessions": sessions,
            }))
        }
        None => {
            let result = store.run(&request)?;
            log::info!(
                "session {} done in {} ms",
                result.id(),
                result.manifest.timings.total_ms
            );
            Ok(session_summary(&store, &result))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let outcome = config::resolve(Args::parse()).and_then(execute);
    match outcome {
        Ok(summary) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            let record = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
