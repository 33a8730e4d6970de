use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Parser;
use scenclust_service::{router, AppState, ServiceConfig};

#[derive(Debug, Parser)]
#[command(
    name = "scenclust-serve",
    version,
    about = "Serve clustering sessions over HTTP"
)]
struct Args {
    #[arg(long, env = "SCENCLUST_BIND", default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Sessions trained concurrently.
    #[arg(long, env = "SCENCLUST_WORKERS", default_value_t = 2, value_parser = clap::value_parser!(u16).range(1..))]
    workers: u16,
    /// Artifact store root.
    #[arg(long, env = "SCENCLUST_OUT", default_value = "scenclust-out")]
    store: PathBuf,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let state = AppState::new(&ServiceConfig {
        store_root: args.store.clone(),
        workers: usize::from(args.workers),
    })?;
    let listener = tokio::net::TcpListener::bind(args.bind).await?;
    log::info!(
        "serving {} on http://{} with {} workers",
        args.store.display(),
        listener.local_addr()?,
        args.workers
    );
    axum::serve(listener, router(state)).await?;
    Ok(())
}
