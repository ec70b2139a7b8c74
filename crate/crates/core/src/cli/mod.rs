//! `fogfed` command line.
//!
//! Exit codes: 0 success, 1 run failure or invalid chain, 2 usage error,
//! 3 unreadable or malformed chain file.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::dataset::ShardMode;
pub use config::{ConfigFile, DataConfig, ModelConfig, OutputConfig, Overrides};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "fogfed",
    version,
    about = "Fog-IoT federated learning simulator with a permissioned ledger"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the federated simulation and write reports, chain and metadata.
    Simulate(RunArgs),
    /// Ledger file utilities.
    Ledger {
        #[command(subcommand)]
        command: LedgerCommand,
    },
    /// Heterogeneity of a set of update times.
    Heterogeneity {
        /// Update times, one per worker.
        times: Vec<f64>,
        /// Read whitespace-separated times from a file instead.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Train a single client from the initial model (debugging aid).
    TrainLocal {
        #[command(flatten)]
        run: RunArgs,
        /// Which fog client's shard and seed to use.
        #[arg(long, default_value_t = 1)]
        client: u64,
    },
    /// Fuse weight files with accuracy-boosted averaging.
    Aggregate {
        /// Weight files, one per client.
        #[arg(required = true)]
        weights: Vec<PathBuf>,
        /// Reported accuracies, aligned with the weight files.
        #[arg(long, value_delimiter = ',', required = true)]
        accuracies: Vec<f64>,
        /// Client ids (default 1..=n in file order); ties favour the lowest.
        #[arg(long, value_delimiter = ',')]
        ids: Option<Vec<u64>>,
        #[arg(long, default_value_t = 2.0)]
        boost: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum LedgerCommand {
    /// Check hash links; prints the first invalid block index on failure.
    Verify { file: PathBuf },
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub clients: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub boost: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// UCI-HAR directory; selects the HAR dataset.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_partition)]
    pub partition: Option<ShardMode>,
}

impl RunArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            clients: self.clients,
            rounds: self.rounds,
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            boost: self.boost,
            seed: self.seed,
            data_dir: self.data_dir.clone(),
            out_dir: self.out_dir.clone(),
            partition: self.partition,
        }
    }
}

fn parse_partition(s: &str) -> Result<ShardMode, String> {
    match s {
        "replicate" => Ok(ShardMode::Replicate),
        "iid" => Ok(ShardMode::Iid),
        _ => Err(format!("expected replicate or iid, got {s:?}")),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = if code == 0 {
                write!(out, "{}", e.render())
            } else {
                write!(err, "{}", e.render())
            };
            return code;
        }
    };
    commands::dispatch(cli.command, out, err)
}
