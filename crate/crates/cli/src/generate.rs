use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;
use d2k_core::dynamics::RobotModel;
use d2k_core::pipeline::{build_commit, generate_records, PerturbationSpec, SiteConfig};
use d2k_core::store::Purpose;

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Robot model file (TOML); the built-in 7-joint arm when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    instance_id: String,
    /// train, validation or evaluation.
    #[arg(long)]
    purpose: Purpose,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Scaling factor or `lo:hi` interval drawn per trajectory. Evaluation
    /// records always use the fixed ISO-path scaling.
    #[arg(long, default_value = "0.3:1", value_parser = parse_scaling)]
    velocity_scaling: [f64; 2],
    #[arg(long, default_value = "0.3:1", value_parser = parse_scaling)]
    acceleration_scaling: [f64; 2],
    #[arg(long, default_value = "local")]
    site: String,
    #[arg(long, default_value_t = 4)]
    waypoints: usize,
    /// Torque sensor noise [N m].
    #[arg(long, default_value_t = 0.05)]
    noise_sigma: f64,
    /// Extra payload at the flange [kg].
    #[arg(long, default_value_t = 0.0)]
    payload_mass: f64,
    /// JSONL output file.
    #[arg(long, short)]
    output: PathBuf,
}

fn parse_scaling(text: &str) -> Result<[f64; 2], String> {
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("`{s}`: {e}"));
    let range = match text.split_once(':') {
        Some((lo, hi)) => [parse(lo)?, parse(hi)?],
        None => [parse(text)?; 2],
    };
    if !(range[0] > 0.0 && range[0] <= range[1] && range[1] <= 1.0) {
        return Err(format!("`{text}` must lie in (0, 1] with lo <= hi"));
    }
    Ok(range)
}

pub fn run(args: &GenerateArgs, seed: u64) -> Result<ExitCode> {
    if args.waypoints < 2 {
        bail!("--waypoints must be at least 2");
    }
    if !(args.noise_sigma >= 0.0) {
        bail!("--noise-sigma must be non-negative");
    }
    let model = match &args.model {
        Some(p) => RobotModel::load(p)?,
        None => RobotModel::default_arm(),
    };
    let site = SiteConfig {
        name: args.site.clone(),
        instance_id: args.instance_id.clone(),
        perturbation: PerturbationSpec { payload_mass: args.payload_mass, ..Default::default() },
        train: 0,
        validation: 0,
        evaluation: 0,
        velocity_scaling: args.velocity_scaling,
        acceleration_scaling: args.acceleration_scaling,
        n_waypoints: args.waypoints,
        noise_sigma: args.noise_sigma,
        seed,
    };
    let (records, failures) = generate_records(&model, &site, build_commit(), seed, args.purpose, args.count, None)?;
    let file = std::fs::File::create(&args.output).with_context(|| args.output.display().to_string())?;
    let mut w = BufWriter::new(file);
    for r in &records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    for f in &failures {
        eprintln!("d2k: {} #{} failed: {}", f.purpose, f.index, f.message);
    }
    log::info!("wrote {} records to {}", records.len(), args.output.display());
    Ok(if failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
