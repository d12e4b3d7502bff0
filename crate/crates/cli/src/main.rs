//! `atroreg`: register surfaces under atrophy constraints, make test shapes,
//! and self-check the adjoint gradient.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{ShapeKind, EXIT_INPUT};
use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "atroreg", version, about = "Atrophy-constrained diffeomorphic surface registration")]
struct Cli {
    /// Log progress to stderr
    #[arg(short, long, global = true)]
    verbose: bool,
    /// Run single-threaded
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Register the template onto the target and write results
    Register {
        /// JSON run configuration
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write a closed synthetic surface
    MakeShape {
        #[arg(value_enum)]
        kind: ShapeKind,
        /// Subdivision level
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(0..=6))]
        level: u32,
        /// Radius of an icosphere
        #[arg(long, conflicts_with = "axes")]
        radius: Option<f64>,
        /// Semi-axes of an ellipsoid, as a,b,c
        #[arg(long, value_parser = parse_triple)]
        axes: Option<[f64; 3]>,
        /// Translation applied after scaling, as x,y,z
        #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
        center: Option<[f64; 3]>,
        /// Output mesh (.off or .vtk)
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Compare the adjoint gradient with finite differences
    Check {
        config: Option<PathBuf>,
        /// Number of sampled control coordinates
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let values: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
        .collect::<Result<_, _>>()?;
    values
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected three comma-separated numbers, got {}", v.len()))
}

fn thread_count(deterministic: bool) -> Result<Option<usize>, String> {
    if deterministic {
        return Ok(Some(1));
    }
    match std::env::var("ATROREG_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("ATROREG_THREADS must be a positive integer, got `{v}`")),
        },
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Register { config, overrides } => {
            let config = RunConfig::resolve(config.as_deref(), &overrides)?;
            commands::register(&config)
        }
        Command::MakeShape {
            kind,
            level,
            radius,
            axes,
            center,
            out,
        } => {
            let axes = radius.map(|r| [r; 3]).or(axes).unwrap_or([1.0; 3]);
            commands::make_shape(kind, level, axes, center.unwrap_or_default(), &out)
        }
        Command::Check {
            config,
            samples,
            corrupt_gradient,
            overrides,
        } => {
            let config = RunConfig::resolve(config.as_deref(), &overrides)?;
            commands::check(&config, samples.max(1), corrupt_gradient)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_INPUT as u8);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match thread_count(cli.deterministic) {
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("could not size the thread pool: {e}");
            }
        }
        Ok(None) => {}
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_INPUT as u8);
        }
    }

    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT as u8)
        }
    }
}
