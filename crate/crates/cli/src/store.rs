use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Subcommand};
use d2k_client::{connect_store, probe};
use d2k_core::dynamics::RobotModel;
use d2k_core::pipeline::{Endpoint, PipelineConfig, StoreApi};
use d2k_core::store::{
    DatasetQuery, Field, Purpose, RobotTypeInfo, ShadowView, StoreRequest, TrajectoryRecord,
};
use d2k_service::ServeOptions;
use serde_json::Value;

use crate::emit;

#[derive(Args, Debug)]
pub struct StoreArgs {
    /// Store directory, opened in process.
    #[arg(long, env = "D2K_STORE_DIR")]
    store_dir: Option<PathBuf>,
    /// Store service endpoint; takes precedence over `--store-dir`.
    #[arg(long)]
    store: Option<Endpoint>,
    #[command(subcommand)]
    verb: StoreVerb,
}

/// Dataset filter. `--query` takes a full JSON query; the other flags
/// refine it.
#[derive(Args, Debug, Default)]
pub struct QueryArgs {
    #[arg(long)]
    query: Option<String>,
    #[arg(long)]
    robot_type: Option<String>,
    #[arg(long = "instance")]
    instances: Vec<String>,
    #[arg(long = "site")]
    sites: Vec<String>,
    #[arg(long)]
    purpose: Option<Purpose>,
    #[arg(long)]
    limit: Option<usize>,
}

impl QueryArgs {
    pub fn query(&self) -> Result<DatasetQuery> {
        let mut q: DatasetQuery = match &self.query {
            Some(text) => serde_json::from_str(text).context("--query is not a dataset query")?,
            None => DatasetQuery::all(),
        };
        if self.robot_type.is_some() {
            q.robot_type = self.robot_type.clone();
        }
        q.instance_ids.extend(self.instances.iter().cloned());
        q.sites.extend(self.sites.iter().cloned());
        q.purpose = self.purpose.or(q.purpose);
        q.limit = self.limit.or(q.limit);
        Ok(q)
    }
}

#[derive(Subcommand, Debug)]
enum StoreVerb {
    /// Ingest a JSONL file of records (`-` reads stdin).
    Ingest { file: PathBuf },
    /// Matching records as JSONL.
    Query {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    Count(QueryArgs),
    /// Dataset statistics; with `--run-id` they are also persisted.
    Stats {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long)]
        run_id: Option<String>,
    },
    Histogram {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long)]
        joint: usize,
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Register joint limits from a robot model file (the built-in arm when absent).
    RegisterRobotType {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    CreateView {
        view_id: String,
        /// Projected fields, e.g. `--field q --field tau`.
        #[arg(long = "field", required = true)]
        fields: Vec<String>,
        #[arg(long, default_value = "")]
        description: String,
        #[command(flatten)]
        query: QueryArgs,
    },
    GetView { view_id: String },
    ListViews,
    ResolveView { view_id: String },
    /// Full records of a view as JSONL.
    ViewRecords {
        view_id: String,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    GetStatsReport { run_id: String },
    /// Serve this store over a framed socket and/or HTTP.
    Serve {
        /// `unix:///path` or `tcp://host:port`.
        #[arg(long)]
        listen: Option<Endpoint>,
        #[arg(long)]
        http: Option<String>,
    },
}

fn send(api: &dyn StoreApi, request: StoreRequest) -> Result<Value> {
    api.call(request).into_result::<Value>().map_err(|e| anyhow!("{}: {e}", e.code()))
}

fn write_jsonl(records: &[TrajectoryRecord], output: Option<&Path>) -> Result<()> {
    let sink: Box<dyn Write> = match output {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| p.display().to_string())?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = BufWriter::new(sink);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl(file: &Path) -> Result<Vec<Value>> {
    let reader: Box<dyn BufRead> = if file == Path::new("-") {
        Box::new(std::io::stdin().lock())
    } else {
        Box::new(std::io::BufReader::new(std::fs::File::open(file).with_context(|| file.display().to_string())?))
    };
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}: not JSON", file.display(), n + 1))?);
    }
    Ok(out)
}

fn parse_field(name: &str) -> Result<Field> {
    serde_json::from_value(Value::String(name.to_string())).map_err(|_| anyhow!("unknown field `{name}`"))
}

pub fn run(args: StoreArgs, config: Option<&Path>) -> Result<ExitCode> {
    if let StoreVerb::Serve { listen, http } = args.verb {
        let store_dir = args.store_dir.context("serving needs --store-dir or D2K_STORE_DIR")?;
        if listen.is_none() && http.is_none() {
            anyhow::bail!("nothing to serve: pass --listen or --http");
        }
        d2k_service::serve_blocking(ServeOptions {
            store_dir: Some(store_dir),
            store_listen: listen,
            http_listen: http,
            ..Default::default()
        })?;
        return Ok(ExitCode::SUCCESS);
    }
    let endpoint = match (args.store, args.store_dir) {
        (Some(ep), _) => ep,
        (None, Some(dir)) => Endpoint::Local(dir),
        (None, None) => match config {
            Some(path) => PipelineConfig::load(path)?.store,
            None => anyhow::bail!("no store: pass --store-dir, --store or --config"),
        },
    };
    probe(&endpoint).with_context(|| format!("store at {endpoint} is unreachable"))?;
    let api = connect_store(&endpoint)?;
    let api = api.as_ref();
    match args.verb {
        StoreVerb::Ingest { file } => {
            emit(&send(api, StoreRequest::IngestBatch { records: read_jsonl(&file)? })?)?;
        }
        StoreVerb::Query { query, output } => write_jsonl(&api.query(&query.query()?)?, output.as_deref())?,
        StoreVerb::Count(query) => emit(&send(api, StoreRequest::Count { query: query.query()? })?)?,
        StoreVerb::Stats { query, run_id } => emit(&send(api, StoreRequest::Stats { query: query.query()?, run_id })?)?,
        StoreVerb::Histogram { query, joint, bins } => {
            emit(&send(api, StoreRequest::Histogram { query: query.query()?, joint_index: joint, n_bins: bins })?)?
        }
        StoreVerb::RegisterRobotType { model } => {
            let model = match model {
                Some(p) => RobotModel::load(&p)?,
                None => RobotModel::default_arm(),
            };
            emit(&send(api, StoreRequest::RegisterRobotType { robot_type: RobotTypeInfo::from(&model) })?)?
        }
        StoreVerb::CreateView { view_id, fields, description, query } => {
            let projection = fields.iter().map(|f| parse_field(f)).collect::<Result<Vec<_>>>()?;
            let mut view = ShadowView::new(view_id, query.query()?, projection);
            view.description = description;
            emit(&send(api, StoreRequest::CreateView { view })?)?
        }
        StoreVerb::GetView { view_id } => emit(&send(api, StoreRequest::GetView { view_id })?)?,
        StoreVerb::ListViews => emit(&send(api, StoreRequest::ListViews)?)?,
        StoreVerb::ResolveView { view_id } => emit(&send(api, StoreRequest::ResolveView { view_id })?)?,
        StoreVerb::ViewRecords { view_id, output } => {
            let records: Vec<TrajectoryRecord> = api
                .call(StoreRequest::ViewRecords { view_id })
                .into_result()
                .map_err(|e| anyhow!("{}: {e}", e.code()))?;
            write_jsonl(&records, output.as_deref())?
        }
        StoreVerb::GetStatsReport { run_id } => emit(&send(api, StoreRequest::GetStatsReport { run_id })?)?,
        StoreVerb::Serve { .. } => unreachable!("handled above"),
    }
    Ok(ExitCode::SUCCESS)
}
