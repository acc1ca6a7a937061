use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hrir_ident::cli;
use hrir_ident::config::ExperimentConfig;
use hrir_ident::Error;

#[derive(Parser)]
#[command(
    name = "hrir-ident",
    version,
    about = "Rotating-array impulse response identification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the perfect sweep and the excitation bank.
    Sweep(Common),
    /// Render the recordings and store the true IRs at the evaluation frames.
    Synth(Common),
    /// Run the configured identifiers.
    Identify {
        #[command(flatten)]
        common: Common,
        /// Worker threads for DNN segments.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Run only this algorithm.
        #[arg(long)]
        algo: Option<String>,
    },
    /// Score identified IRs against the truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        algo: Option<String>,
    },
    /// Collect evaluated runs in a directory into one table.
    Report {
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Sweep(c) => cli::cmd_sweep(&load(&c)?, &c.out),
        Command::Synth(c) => cli::cmd_synth(&load(&c)?, &c.out),
        Command::Identify {
            common,
            workers,
            algo,
        } => cli::cmd_identify(&load(&common)?, &common.out, workers, algo.as_deref()),
        Command::Evaluate { common, algo } => {
            for r in cli::cmd_evaluate(&load(&common)?, &common.out, algo.as_deref())? {
                println!("{:10} NM {:8.3} dB  LSD {:7.3} dB", r.algo, r.nm_db, r.lsd_db);
            }
            Ok(())
        }
        Command::Report { out } => {
            for r in cli::cmd_report(&out)? {
                println!("{:10} NM {:8.3} dB  LSD {:7.3} dB", r.algo, r.nm_db, r.lsd_db);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
