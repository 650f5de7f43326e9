use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use slicesim_core::config::{load_config, preset, scenario_to_toml};
use slicesim_core::sweep::{report, run_sweep, Figure};
use slicesim_core::{Policy, SimError, SweepSpec};

#[derive(Parser)]
#[command(
    name = "slicesim",
    version,
    about = "End-to-end slicing simulator for WLAN to FWA uplinks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a policy by load by seed sweep and write traces and aggregates.
    Simulate(SimulateArgs),
    /// Turn an aggregate into plot data for one figure.
    Report {
        /// Directory written by `simulate`.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_parser = parse_figure)]
        figure: Figure,
    },
    /// Print the fully expanded scenario of a preset as TOML.
    ShowConfig {
        #[arg(long, default_value = "paper-case")]
        preset: String,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML config file.
    #[arg(long, required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset, used when no config file is given.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated policies: basic, e2e, elastic.
    #[arg(long, value_delimiter = ',')]
    policy: Option<Vec<Policy>>,
    /// Comma-separated active RG fractions.
    #[arg(long, value_delimiter = ',')]
    loads: Option<Vec<f64>>,
    /// Comma-separated seeds or a half-open range `a..b`.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<Seeds>,
    /// Simulated seconds per run.
    #[arg(long)]
    duration_s: Option<u64>,
}

#[derive(Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("bad range start: {e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("bad range end: {e}"))?;
        return Ok(Seeds((a..b).collect()));
    }
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| x.trim().parse().map_err(|e| format!("bad seed `{x}`: {e}")))
        .collect::<Result<_, _>>()
        .map(Seeds)
}

fn parse_figure(s: &str) -> Result<Figure, String> {
    s.parse()
}

fn build_spec(a: &SimulateArgs) -> Result<SweepSpec, SimError> {
    let mut spec = match (&a.config, &a.preset) {
        (Some(path), _) => load_config(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    if let Some(p) = &a.policy {
        spec.policies = p.clone();
    }
    if let Some(l) = &a.loads {
        spec.loads = l.clone();
    }
    if let Some(s) = &a.seeds {
        spec.seeds = s.0.clone();
    }
    if let Some(d) = a.duration_s {
        spec.base.duration_ms = d * 1_000;
    }
    spec.validate()?;
    Ok(spec)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => build_spec(&args).and_then(|spec| {
            let out = run_sweep(&spec, Some(&args.out))?;
            println!(
                "{} runs, aggregate in {}",
                out.runs.len(),
                args.out.join("aggregate.csv").display()
            );
            Ok(())
        }),
        Command::Report { input, figure } => report(&input, figure).map(|p| println!("{}", p.display())),
        Command::ShowConfig { preset: name } => preset(&name)
            .and_then(|s| scenario_to_toml(&s.base))
            .map(|t| print!("{t}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
