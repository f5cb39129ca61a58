//! `macproto` command-line driver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use macproto::marl::ObsMode;
use macproto::Error;

use commands::Overrides;
use config::Loaded;

#[derive(Parser)]
#[command(name = "macproto", version, about = "Learn and evaluate uplink MAC protocols")]
struct Cli {
    /// Log filter when RUST_LOG is unset (overrides the config's log_level).
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $MACPROTO_OUT/<command> or runs/<command>].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Raw,
    Abstract,
}

#[derive(Subcommand)]
enum Command {
    /// Train the observation abstraction φ.
    TrainAbstraction {
        #[command(flatten)]
        common: Common,
        /// Number of full-batch training steps.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train one abstraction per label count and report the plateau.
    SearchZ {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train the shared MAPPO actor on raw or abstract observations.
    TrainPolicy {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train the tabular Q-learning baseline.
    TrainQ {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate solutions across a sweep axis.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Summarise a checkpoint, or verify a sweep manifest.
    Inspect { path: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Training(_) => 3,
        Error::Integrity { .. } => 4,
        Error::Contract(_) => 5,
        Error::Io { .. } | Error::Csv(_) | Error::Json(_) => 1,
    }
}

fn init_logging(flag: Option<&str>, config: Option<&str>) {
    let level = flag.or(config).unwrap_or("info");
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn run(cli: Cli) -> macproto::Result<()> {
    let (common, episodes) = match &cli.command {
        Command::TrainAbstraction { common, episodes }
        | Command::SearchZ { common, episodes }
        | Command::TrainPolicy { common, episodes, .. }
        | Command::TrainQ { common, episodes } => (common.clone(), *episodes),
        Command::Sweep { common } => (common.clone(), None),
        Command::Inspect { .. } => (Common::default(), None),
    };
    let loaded = match &common.config {
        Some(p) => Loaded::from_file(p),
        None => Ok(Loaded::default()),
    };
    init_logging(
        cli.log_level.as_deref(),
        loaded.as_ref().ok().and_then(|l| l.config.log_level.as_deref()),
    );
    let loaded = loaded?;
    let ov = Overrides {
        seed: common.seed,
        out: common.out,
        episodes,
    };
    let out = match cli.command {
        Command::TrainAbstraction { .. } => commands::train_abstraction(&loaded, &ov)?,
        Command::SearchZ { .. } => commands::search_z(&loaded, &ov)?,
        Command::TrainPolicy { mode, .. } => {
            let mode = mode.map(|m| match m {
                Mode::Raw => ObsMode::Raw,
                Mode::Abstract => ObsMode::Abstract,
            });
            commands::train_policy(&loaded, &ov, mode)?
        }
        Command::TrainQ { .. } => commands::train_q(&loaded, &ov)?,
        Command::Sweep { .. } => commands::sweep(&loaded, &ov)?,
        Command::Inspect { path } => {
            print!("{}", commands::inspect(&path)?);
            return Ok(());
        }
    };
    println!("outputs written to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
