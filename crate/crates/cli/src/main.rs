//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 configuration/usage error, 2 divergence
//! (partial outputs are still written).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use manipsim::FilterChoice;
use manipsim_cli::{compare, run, sweep, CliError, RunManifest, SeedSpec};

#[derive(Parser)]
#[command(name = "manipsim", version, about = "Manipulator tracking scenarios: run, sweep and compare")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (TOML); defaults to the built-in scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override a scenario key, e.g. --set kd=12 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Which filter(s) to run.
    #[arg(long, value_parser = parse_filter)]
    filter: Option<FilterChoice>,
    /// Seed count (`20`) or explicit list (`1,5,9`).
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trace.csv, metrics.json and fig2..7.csv.
    Run(CommonArgs),
    /// Run one scenario per seed and write aggregated metrics.json.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write a trace.csv per seed under `seed_<n>/`.
        #[arg(long)]
        traces: bool,
    },
    /// Run both filters across seeds and write comparison.json.
    Compare(CommonArgs),
}

fn parse_filter(raw: &str) -> Result<FilterChoice, String> {
    match raw {
        "ekf" => Ok(FilterChoice::Ekf),
        "arekf" => Ok(FilterChoice::Arekf),
        "both" => Ok(FilterChoice::Both),
        other => Err(format!("unknown filter `{other}` (expected ekf, arekf or both)")),
    }
}

fn manifest(common: &CommonArgs, emit_traces: bool) -> Result<RunManifest, CliError> {
    let overrides = common
        .set
        .iter()
        .map(|raw| {
            raw.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CliError::Config(format!("override `{raw}` is not KEY=VALUE")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let seeds = match &common.seeds {
        Some(raw) => Some(SeedSpec::parse(raw)?),
        None => None,
    };
    Ok(RunManifest {
        config_path: common.config.clone(),
        out_dir: common.out.clone(),
        overrides,
        filter: common.filter,
        seeds,
        emit_traces,
    })
}

fn dispatch(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Run(common) => run(&manifest(&common, false)?),
        Command::Sweep { common, traces } => sweep(&manifest(&common, traces)?),
        Command::Compare(common) => compare(&manifest(&common, false)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are successful exits; anything else is usage
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::from(0);
        }
    };
    match dispatch(cli) {
        Ok(false) => ExitCode::from(0),
        Ok(true) => {
            eprintln!("run diverged; partial outputs written");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
