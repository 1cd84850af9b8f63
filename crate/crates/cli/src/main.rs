use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use spde_cli::commands::{self, Paths};
use spde_cli::{CliError, Config};

/// Learn linear SPDEs from simulated trajectories.
#[derive(Parser, Debug)]
#[command(name = "spdechaos", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `out` from the config, else `.`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset file (default: `dataset` from the config, else `<out>/dataset.bin`).
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset.
    Simulate(Common),
    /// Train a model, or resume from a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to resume from.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Stop after this many epochs and write a resumable checkpoint.
        #[arg(long)]
        stop_after: Option<usize>,
        /// Train and evaluate once per seed, e.g. `0,1,2`.
        #[arg(long, value_delimiter = ',', conflicts_with_all = ["checkpoint", "stop_after"])]
        seeds: Vec<u64>,
    },
    /// Evaluate a checkpoint against a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (default: `<out>/checkpoint.bin`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Variance curve and energy spectrum of a dataset.
    Diagnose(Common),
}

fn run(cli: Cli, log: &mut dyn Write) -> Result<(), CliError> {
    let (common, checkpoint) = match &cli.command {
        Command::Simulate(c) | Command::Diagnose(c) => (c, None),
        Command::Train { common, checkpoint, .. } | Command::Eval { common, checkpoint } => {
            (common, checkpoint.clone())
        }
    };
    let cfg = Config::load(&common.config)?;
    let paths = Paths {
        out: common.out.clone(),
        dataset: common.dataset.clone(),
        checkpoint,
    };
    match cli.command {
        Command::Simulate(_) => commands::simulate(&cfg, &paths, log).map(drop),
        Command::Train { seeds, .. } if !seeds.is_empty() => commands::train_seeds(&cfg, &paths, &seeds, log).map(drop),
        Command::Train { stop_after, .. } => commands::train(&cfg, &paths, stop_after, log).map(drop),
        Command::Eval { .. } => commands::evaluate(&cfg, &paths, log).map(drop),
        Command::Diagnose(_) => commands::diagnose(&cfg, &paths, log).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_owned()).report());
            return ExitCode::from(2);
        }
    };
    let stdout = io::stdout();
    let mut log = stdout.lock();
    match run(cli, &mut log) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
