use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tiltlab::{replay, run_config_file, CliError, RunOptions, ENV_OUT, ENV_SEED};

#[derive(Parser)]
#[command(
    name = "tiltlab",
    version,
    about = "Seeded fingerprinting and adaptive-analysis experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write CSV plus manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Recompute one CSV row from its manifest and trial seed.
    Replay {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        row: usize,
    },
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(ENV_SEED) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Parameter(format!("{ENV_SEED} is not a u64: {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            out,
            workers,
        } => env_seed().and_then(|env| {
            let opts = RunOptions {
                seed: seed.or(env),
                out: out.or_else(|| std::env::var_os(ENV_OUT).map(PathBuf::from)),
                workers,
            };
            let summary = run_config_file(&config, &opts)?;
            println!(
                "wrote {} rows to {} ({} failed)",
                summary.rows,
                summary.csv.display(),
                summary.failed_rows
            );
            if let Some(e) = &summary.error {
                eprintln!("error: {e}");
            }
            Ok(summary.success())
        }),
        Command::Replay { csv, row } => replay(&csv, row).map(|r| {
            println!("{}", r.header.join(","));
            println!("{}", r.recorded.join(","));
            println!("{}", r.replayed.join(","));
            println!(
                "{}",
                if r.identical() {
                    "identical"
                } else {
                    "differs"
                }
            );
            r.identical()
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
