use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use ssvi_cli::commands::{self, FitOverrides};
use ssvi_cli::config::EngineName;
use ssvi_cli::{io, RunConfig};
use ssvi_core::data::TimeUnit;

#[derive(Parser)]
#[command(name = "ssvi", version, about = "Variational inference for state-space Gaussian processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Sequential,
    Dense,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write posterior, sites, trace, metrics and model files.
    Fit {
        config: PathBuf,
        #[arg(long, value_enum)]
        engine: Option<EngineArg>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Predict at new times from a fitted model.
    Predict {
        config: PathBuf,
        /// CSV of query times, optionally with observations in a second column.
        #[arg(long)]
        test: PathBuf,
        /// Directory holding model.json and sites.csv (defaults to the config's output dir).
        #[arg(long)]
        model_dir: Option<PathBuf>,
    },
    /// Time both engines on synthetic data of several sizes.
    Bench {
        config: PathBuf,
        /// Comma-separated sizes, e.g. 1e2,1e3,1e4.
        #[arg(long, default_value = "1e2,1e3,1e4")]
        sizes: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Bin an event-time file into counts.
    Bin {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        bins: usize,
        /// Bin range as `start,end`.
        #[arg(long, allow_hyphen_values = true)]
        range: String,
        #[arg(long, default_value = "raw")]
        time_unit: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn emit(output: Option<PathBuf>, bytes: &[u8]) -> Result<()> {
    match output {
        Some(p) => io::write_atomic(&p, bytes),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit {
            config,
            engine,
            output_dir,
        } => {
            let config = RunConfig::load(&config)?;
            let overrides = FitOverrides {
                engine: engine.map(|e| match e {
                    EngineArg::Sequential => EngineName::Sequential,
                    EngineArg::Dense => EngineName::Dense,
                }),
                output_dir,
            };
            let (out, metrics) = commands::fit(&config, &overrides)?;
            println!(
                "objective {} ({} iterations, {:.3}s) -> {}",
                metrics.final_objective,
                metrics.iters,
                metrics.wall_time_s,
                out.display()
            );
        }
        Command::Predict {
            config,
            test,
            model_dir,
        } => {
            let config = RunConfig::load(&config)?;
            let dir = model_dir.unwrap_or_else(|| config.output_dir());
            let path = commands::predict(&config, &dir, &test)?;
            println!("{}", path.display());
        }
        Command::Bench { config, sizes, output } => {
            let config = RunConfig::load(&config)?;
            let rows = commands::bench(&config, &commands::parse_sizes(&sizes)?)?;
            emit(output, &commands::bench_csv(&rows)?)?;
        }
        Command::Bin {
            input,
            bins,
            range,
            time_unit,
            output,
        } => {
            let unit: TimeUnit = time_unit.parse()?;
            let csv = commands::bin(&input, bins, commands::parse_range(&range)?, unit)?;
            emit(output, &csv)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
