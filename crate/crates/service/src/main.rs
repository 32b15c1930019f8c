use std::path::PathBuf;
use std::time::Duration;

use clap::Parser;
use d2k_core::pipeline::Endpoint;
use d2k_service::{serve_until_interrupted, ServeOptions};

/// Hosts the shadow store and/or the sweep coordinator.
#[derive(Parser, Debug)]
#[command(name = "d2k-service", version)]
struct Args {
    /// Shadow store directory.
    #[arg(long, env = "D2K_STORE_DIR")]
    store_dir: Option<PathBuf>,
    /// Model repository directory for the sweep coordinator.
    #[arg(long, env = "D2K_REPO_DIR")]
    repo_dir: Option<PathBuf>,
    /// Framed store endpoint, `tcp://host:port` or `unix:///path`.
    #[arg(long)]
    store_listen: Option<Endpoint>,
    /// Framed sweep endpoint, `tcp://host:port` or `unix:///path`.
    #[arg(long)]
    sweep_listen: Option<Endpoint>,
    /// HTTP address, e.g. `127.0.0.1:8080`.
    #[arg(long)]
    http: Option<String>,
    /// Seconds before an unreported configuration expires.
    #[arg(long)]
    config_timeout_s: Option<u64>,
}

#[tokio::main]
async fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    if args.store_listen.is_none() && args.sweep_listen.is_none() && args.http.is_none() {
        eprintln!("nothing to serve: pass --store-listen, --sweep-listen or --http");
        std::process::exit(2);
    }
    let opts = ServeOptions {
        store_dir: args.store_dir,
        repo_dir: args.repo_dir,
        store_listen: args.store_listen,
        sweep_listen: args.sweep_listen,
        http_listen: args.http,
        config_timeout: args.config_timeout_s.map(Duration::from_secs),
    };
    if let Err(e) = serve_until_interrupted(opts).await {
        eprintln!("d2k-service: {e}");
        std::process::exit(1);
    }
}
