//! `wasep`: command-line front end for the exclusion-process laboratory.
//!
//! Every run writes CSV data files and a `manifest.json` into the output
//! directory. Exit codes: 0 success, 1 i/o or failed verification,
//! 2 invalid input, 3 numerical failure.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use config::{Command, RunConfig, Settings};
use error::CliError;
use output::{sorted_json, Output};

#[derive(Debug, Parser)]
#[command(name = "wasep", version, about = "Quasi-potential, optimal paths and simulation of the boundary driven WASEP")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    #[command(flatten)]
    settings: Settings,
    /// JSON file with settings; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "WASEP_OUT_DIR", default_value = "wasep-out")]
    out_dir: PathBuf,
    /// Cap on worker threads for sweeps and simulations
    #[arg(long)]
    threads: Option<usize>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let start = Instant::now();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(e.to_string()))?;
    }
    let file = match &cli.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    let cfg = RunConfig::resolve(cli.command, cli.settings.over(file))?;
    log::info!("running {} with {:?}", cfg.command.name(), cfg);
    let mut out = Output::new(&cli.out_dir, &cfg)?;
    let headline = commands::dispatch(&cfg, &mut out)?;
    let manifest = out.manifest(&cfg, &headline, start.elapsed().as_secs_f64(), rayon::current_num_threads())?;
    println!("{}", sorted_json(&headline)?);
    log::info!("wrote {}", manifest.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let out_dir = cli.out_dir.clone();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = e.record();
            let text = sorted_json(&record).unwrap_or_else(|_| e.to_string());
            eprintln!("{text}");
            if out_dir.is_dir() {
                let _ = std::fs::write(out_dir.join("error.json"), text + "\n");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
