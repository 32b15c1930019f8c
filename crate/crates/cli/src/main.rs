//! `d2k`: drives the data-to-knowledge pipeline against local directories or
//! running services.

mod generate;
mod store;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use d2k_client::{connect, connect_sweep, probe, Connections};
use d2k_core::pipeline::*;
use d2k_core::sweep::Target;
use d2k_service::{serve_blocking, ServeOptions};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "d2k", version, about = "Data-to-knowledge pipeline for robot inverse dynamics")]
struct Cli {
    /// Pipeline config file (TOML).
    #[arg(long, global = true, env = "D2K_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate labeled trajectories into a JSONL file.
    Generate(generate::GenerateArgs),
    /// Shadow store verbs.
    Store(store::StoreArgs),
    /// Sweep coordinator service and status.
    Sweep {
        #[command(subcommand)]
        command: SweepCommand,
    },
    /// Host the store and the sweep coordinator in one process.
    Serve(ServeArgs),
    /// Simulated sites.
    Site {
        #[command(subcommand)]
        command: SiteCommand,
    },
    /// The nightly training loop.
    Nightly(NightlyArgs),
    /// Coverage-directed data collection.
    K2d {
        #[command(subcommand)]
        command: K2dCommand,
    },
    /// Run the four-setup fine-tuning benchmark and write its report.
    Bench,
    /// Re-render report SVGs from the CSV artifacts.
    Report {
        /// Report directory; the config's `report_dir` by default.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum SweepCommand {
    /// Serve the coordinator over a framed stream socket.
    Serve {
        #[arg(long, env = "D2K_REPO_DIR")]
        repo_dir: PathBuf,
        /// `unix:///path` or `tcp://host:port`; `<repo-dir>/sweep.sock` by default.
        #[arg(long)]
        listen: Option<Endpoint>,
        /// Also serve HTTP on this address.
        #[arg(long)]
        http: Option<String>,
        /// Store to evaluate accepted models against.
        #[arg(long)]
        store_dir: Option<PathBuf>,
        #[arg(long)]
        config_timeout_s: Option<u64>,
    },
    /// Rounds and repository bests, or one round with `--round`.
    Status {
        #[arg(long, env = "D2K_REPO_DIR", conflicts_with = "sweep")]
        repo_dir: Option<PathBuf>,
        /// Coordinator endpoint; the config's `sweep` by default.
        #[arg(long)]
        sweep: Option<Endpoint>,
        #[arg(long)]
        round: Option<String>,
    },
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, env = "D2K_STORE_DIR")]
    store_dir: Option<PathBuf>,
    #[arg(long, env = "D2K_REPO_DIR")]
    repo_dir: Option<PathBuf>,
    #[arg(long)]
    store_listen: Option<Endpoint>,
    #[arg(long)]
    sweep_listen: Option<Endpoint>,
    #[arg(long)]
    http: Option<String>,
    #[arg(long)]
    config_timeout_s: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum SiteCommand {
    /// Generate and ingest the configured mix for the named sites (all when none).
    Run { sites: Vec<String> },
}

#[derive(Args, Debug)]
struct NightlyArgs {
    /// Run immediately and exit instead of waiting for the schedule.
    #[arg(long)]
    once: bool,
    /// `foundation` or `instance:<id>`; repeatable.
    #[arg(long = "target", default_value = "foundation")]
    targets: Vec<Target>,
}

#[derive(Subcommand, Debug)]
enum K2dCommand {
    /// Print directives for under-covered joint regions.
    Scan(store::QueryArgs),
    /// Collect data for directives, from a file or a fresh scan.
    Apply {
        /// JSON array of directives as printed by `scan`.
        #[arg(long)]
        directives: Option<PathBuf>,
        #[command(flatten)]
        query: store::QueryArgs,
    },
}

pub(crate) fn emit<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// A reader that closed stdout early (`d2k ... | head`) is not a failure.
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| c.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe))
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig> {
    let path = path.context("no pipeline config: pass --config or set D2K_CONFIG")?;
    let mut config = PipelineConfig::load(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

/// Connects to the configured services after checking both answer.
fn services(config: &PipelineConfig) -> Result<Connections> {
    for ep in [&config.store, &config.sweep] {
        probe(ep).with_context(|| format!("service at {ep} is unreachable"))?;
    }
    Ok(connect(&config.store, &config.sweep)?)
}

fn serve(opts: ServeOptions) -> Result<ExitCode> {
    serve_blocking(opts)?;
    Ok(ExitCode::SUCCESS)
}

fn site_run(config: &PipelineConfig, names: &[String]) -> Result<ExitCode> {
    let conn = services(config)?;
    let names: Vec<String> =
        if names.is_empty() { config.sites.iter().map(|s| s.name.clone()).collect() } else { names.to_vec() };
    for n in &names {
        config.site(n)?;
    }
    // Sites have independent seeds, so they generate concurrently.
    let runs: Vec<Result<SiteRun, PipelineError>> = std::thread::scope(|s| {
        let handles: Vec<_> =
            names.iter().map(|n| s.spawn(|| run_site(config, conn.store.as_ref(), n))).collect();
        handles.into_iter().map(|h| h.join().expect("site thread panicked")).collect()
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    emit(&runs)?;
    let failed = runs.iter().any(|r| !r.failures.is_empty());
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn nightly_once(config: &PipelineConfig, conn: &Connections, targets: &[Target]) -> Result<bool> {
    let mut ok = true;
    for target in targets {
        let report = run_nightly(config, conn.store.as_ref(), conn.sweep.as_ref(), target)?;
        emit(&report)?;
        ok &= report.completed();
    }
    Ok(ok)
}

fn nightly(config: &PipelineConfig, args: &NightlyArgs) -> Result<ExitCode> {
    let conn = services(config)?;
    if args.once {
        let ok = nightly_once(config, &conn, &args.targets)?;
        return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE });
    }
    let schedule = Schedule::parse(&config.schedule)?;
    loop {
        let next = schedule.next_after(chrono::Utc::now());
        log::info!("next nightly run at {next}");
        std::thread::sleep((next - chrono::Utc::now()).to_std().unwrap_or_default());
        if let Err(e) = nightly_once(config, &conn, &args.targets) {
            log::error!("nightly run failed: {e:#}");
        }
    }
}

fn k2d(config: &PipelineConfig, command: &K2dCommand) -> Result<ExitCode> {
    let conn = services(config)?;
    match command {
        K2dCommand::Scan(q) => emit(&k2d_directives(config, conn.store.as_ref(), &q.query()?)?)?,
        K2dCommand::Apply { directives, query } => {
            let directives: Vec<CoverageDirective> = match directives {
                Some(path) => serde_json::from_slice(&std::fs::read(path).with_context(|| path.display().to_string())?)
                    .with_context(|| format!("{} is not a directive list", path.display()))?,
                None => k2d_directives(config, conn.store.as_ref(), &query.query()?)?,
            };
            #[derive(Serialize)]
            struct Applied<'a> {
                directive: &'a CoverageDirective,
                record_ids: Vec<String>,
            }
            let applied = directives
                .iter()
                .map(|d| Ok(Applied { directive: d, record_ids: apply_directive(config, conn.store.as_ref(), d)? }))
                .collect::<Result<Vec<_>, PipelineError>>()?;
            emit(&applied)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep_status(config: Option<&Path>, repo_dir: Option<PathBuf>, ep: Option<Endpoint>, round: Option<String>) -> Result<ExitCode> {
    let ep = match (ep, repo_dir) {
        (Some(ep), _) => ep,
        (None, Some(dir)) => Endpoint::Local(dir),
        (None, None) => load_config(config, None)?.sweep,
    };
    probe(&ep).with_context(|| format!("service at {ep} is unreachable"))?;
    let sweep = connect_sweep(&ep, None)?;
    match round {
        Some(r) => emit(&sweep.status(&r)?)?,
        None => emit(&sweep.overview()?)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Generate(args) => generate::run(&args, cli.seed.unwrap_or(0)),
        Command::Store(args) => store::run(args, config_path),
        Command::Sweep { command: SweepCommand::Serve { repo_dir, listen, http, store_dir, config_timeout_s } } => {
            let listen = listen.unwrap_or_else(|| Endpoint::Unix(repo_dir.join("sweep.sock")));
            serve(ServeOptions {
                store_dir,
                repo_dir: Some(repo_dir),
                sweep_listen: Some(listen),
                http_listen: http,
                config_timeout: config_timeout_s.map(std::time::Duration::from_secs),
                ..Default::default()
            })
        }
        Command::Sweep { command: SweepCommand::Status { repo_dir, sweep, round } } => {
            sweep_status(config_path, repo_dir, sweep, round)
        }
        Command::Serve(a) => {
            if a.store_listen.is_none() && a.sweep_listen.is_none() && a.http.is_none() {
                bail!("nothing to serve: pass --store-listen, --sweep-listen or --http");
            }
            serve(ServeOptions {
                store_dir: a.store_dir,
                repo_dir: a.repo_dir,
                store_listen: a.store_listen,
                sweep_listen: a.sweep_listen,
                http_listen: a.http,
                config_timeout: a.config_timeout_s.map(std::time::Duration::from_secs),
            })
        }
        Command::Site { command: SiteCommand::Run { sites } } => site_run(&load_config(config_path, cli.seed)?, &sites),
        Command::Nightly(args) => nightly(&load_config(config_path, cli.seed)?, &args),
        Command::K2d { command } => k2d(&load_config(config_path, cli.seed)?, &command),
        Command::Bench => {
            let config = load_config(config_path, cli.seed)?;
            let conn = services(&config)?;
            emit(&run_benchmark(&config, conn.store.as_ref(), conn.sweep.as_ref())?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { dir } => {
            let dir = match dir {
                Some(d) => d,
                None => load_config(config_path, cli.seed)?.report_dir,
            };
            emit(&render_report(&dir)?)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("d2k: {e:#}");
            ExitCode::FAILURE
        }
    }
}
