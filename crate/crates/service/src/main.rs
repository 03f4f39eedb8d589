use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Parser;
use scene_nav::pipeline::RunConfig;
use scene_nav_service::{router, AppState, ServiceConfig};

/// Session-based map, keypoint and planning API for the waypoint editor.
#[derive(Parser)]
#[command(name = "scene-nav-service", version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Run config supplying map and plan defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for per-revision session snapshots.
    #[arg(long)]
    persist: Option<PathBuf>,
    /// Reject keypoint lists with out-of-bounds entries.
    #[arg(long)]
    strict: bool,
}

#[tokio::main]
async fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("SCENE_NAV_LOG", "info")).init();
    let args = Args::parse();
    let run = match &args.config {
        Some(p) => RunConfig::load(p).unwrap_or_else(|e| {
            eprintln!("error: {e}");
            std::process::exit(2)
        }),
        None => RunConfig::default(),
    };
    let state = AppState::new(ServiceConfig {
        map: run.map,
        plan: run.plan,
        strict: args.strict,
        persist_dir: args.persist,
    });
    let listener = tokio::net::TcpListener::bind(args.addr).await.unwrap_or_else(|e| {
        eprintln!("error: cannot bind {}: {e}", args.addr);
        std::process::exit(2)
    });
    log::info!("listening on {}", args.addr);
    axum::serve(listener, router(state)).await.expect("server error");
}
