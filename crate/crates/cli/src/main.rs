//! `tscert` — train, certify, attack, ablate, and report on smoothed
//! time-series classifiers.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numerical
//! divergence, 1 other failures.

use std::path::PathBuf;
use std::process::ExitCode as ProcessExit;

use clap::{Parser, Subcommand, ValueEnum};

use tscert_cli::config::Config;
use tscert_cli::{commands, CliError};
use tscert_core::tsdata::Delimiter;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DelimiterArg {
    Tab,
    Comma,
}

impl From<DelimiterArg> for Delimiter {
    fn from(d: DelimiterArg) -> Self {
        match d {
            DelimiterArg::Tab => Delimiter::Tab,
            DelimiterArg::Comma => Delimiter::Comma,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tscert", version, about = "Certified robustness for time-series classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct CommonArgs {
    /// Run configuration (a config file, or a manifest to rerun).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "tscert-out")]
    out: PathBuf,
    /// Override the UCR file delimiter.
    #[arg(long, value_enum)]
    delimiter: Option<DelimiterArg>,
    /// Worker threads for per-sample parallelism (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the configured smoothed classifier.
    Train(CommonArgs),
    /// Monte Carlo certification of the test split.
    Certify(CommonArgs),
    /// PGD-ℓ2 attack study over the configured setups.
    Attack(CommonArgs),
    /// Ensemble-size or keep-ratio ablation.
    Ablate(CommonArgs),
    /// Combine run manifests into summary and figure tables.
    Report(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Train(a)
            | Command::Certify(a)
            | Command::Attack(a)
            | Command::Ablate(a)
            | Command::Report(a) => a,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let args = cli.command.common();
    if let Some(threads) = args.threads {
        // Ignore failure: the global pool may already exist in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let config = Config::load(&args.config)?;
    let delimiter = args.delimiter.map(Delimiter::from);
    let manifest = match &cli.command {
        Command::Train(a) => commands::cmd_train(config, &a.out, delimiter)?,
        Command::Certify(a) => commands::cmd_certify(config, &a.out, delimiter)?,
        Command::Attack(a) => commands::cmd_attack(config, &a.out, delimiter)?,
        Command::Ablate(a) => commands::cmd_ablate(config, &a.out, delimiter)?,
        Command::Report(a) => commands::cmd_report(config, &a.out)?,
    };
    println!(
        "{} finished in {:.1}s; outputs in {}",
        manifest.command,
        manifest.wall_clock_seconds,
        args.out.display()
    );
    for (key, value) in &manifest.metrics {
        println!("  {key} = {value}");
    }
    Ok(())
}

fn main() -> ProcessExit {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ProcessExit::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ProcessExit::from(err.exit_code() as u8)
        }
    }
}
