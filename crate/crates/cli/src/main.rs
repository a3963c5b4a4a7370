//! `tsmom`: synthetic data, config validation, backtests and reports.
//!
//! Exit codes: 0 ok, 2 config, 3 data, 4 training, 5 io, 130 interrupted.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use log::LevelFilter;

use commands::CliError;

#[derive(Parser)]
#[command(name = "tsmom", version, about = "Momentum backtests with multi-task LSTM position sizing")]
struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic universe of a config as CSV files under
    /// `<output dir>/data`.
    Synth { config: PathBuf },
    /// Check a config and its data; print the fold table and run count.
    Validate { config: PathBuf },
    /// Run every configured strategy and write results and reports.
    Backtest { config: PathBuf },
    /// Rebuild the reports of a finished run directory.
    Report { run_dir: PathBuf },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { config } => {
            let cfg = commands::load_config(&config)?;
            for p in commands::synth(&cfg, &cfg.output_dir().join("data"))? {
                println!("{}", p.display());
            }
        }
        Command::Validate { config } => {
            let cfg = commands::load_config(&config)?;
            print!("{}", commands::validate(&cfg)?);
        }
        Command::Backtest { config } => {
            let cfg = commands::load_config(&config)?;
            let cancel = Arc::new(AtomicBool::new(false));
            let flag = cancel.clone();
            ctrlc::set_handler(move || {
                if flag.swap(true, Ordering::SeqCst) {
                    std::process::exit(130);
                }
                eprintln!("interrupt received: finishing running jobs, press again to abort");
            })
            .map_err(|e| CliError::Io(format!("signal handler: {e}")))?;
            print!("{}", commands::backtest(&cfg, &cancel)?);
            println!("\nresults in {}", cfg.output_dir().display());
        }
        Command::Report { run_dir } => {
            let cfg = commands::load_run_config(&run_dir)?;
            print!("{}", commands::report(&run_dir, &cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => LevelFilter::Warn,
        (false, 0) => LevelFilter::Info,
        (false, 1) => LevelFilter::Debug,
        _ => LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().format_target(false).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
