use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use iiva_cli::config::SEED_ENV;
use iiva_cli::{evaluate, separate, simulate, sweep, CliResult};

#[derive(Parser)]
#[command(name = "iiva", version, about = "Spatially informed source separation and extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Separate a multichannel WAV as described by a run config (or a previous run's manifest).
    Separate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Simulate a scene and write the mixture and per-source reference images.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score separated signals against reference images; CSV on stdout or --out.
    Evaluate {
        #[arg(long)]
        est: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// 1-based index of the target image.
        #[arg(long)]
        target: usize,
        #[arg(long, default_value_t = 1)]
        trial: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run simulate, separate and evaluate over a parameter grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Separate { config } => {
            let r = separate::cmd_separate(&config)?;
            eprintln!("wrote {} files to {}", r.outputs.len(), r.output_dir.display());
        }
        Command::Simulate { config } => {
            let out = simulate::cmd_simulate(&config)?;
            eprintln!("wrote {} files", out.len());
        }
        Command::Evaluate {
            est,
            reference,
            target,
            trial,
            out,
        } => evaluate::cmd_evaluate(&est, &reference, target, trial, out.as_deref())?,
        Command::Sweep { config, jobs } => {
            let out = sweep::cmd_sweep(&config, jobs)?;
            eprintln!("wrote {}", out[0].display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("iiva: {e}");
            if matches!(e, iiva_cli::CliError::Config(_)) && std::env::var_os(SEED_ENV).is_some() {
                eprintln!("iiva: note {SEED_ENV} is set");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
