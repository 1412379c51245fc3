//! `ramrec`: data preparation, training, evaluation, attention analyses
//! and block benchmarks.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "ramrec", version, about = "Sequential recommendation with reused item representations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 is the reference path.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a raw log, filter it and write the canonical dataset.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        /// movielens-dat, csv or tsv.
        #[arg(long, default_value = "movielens-dat")]
        format: String,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a model, or a grid of models with `--grid`.
    Train {
        /// Prepared dataset directory; overrides the `data` key.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from the checkpoints and log in `--out`.
        #[arg(long)]
        resume: bool,
        /// Sweep axis such as `n_b=1,2,3`; one of d, n, n_h, n_b. Repeatable.
        #[arg(long, value_name = "KEY=V1,V2")]
        grid: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Ranking metrics of a checkpoint on validation or test pairs.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long, value_delimiter = ',', default_value = "10,20")]
        cutoffs: Vec<usize>,
        /// Skip items the user already interacted with (the target excepted).
        #[arg(long)]
        exclude_seen: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Attention entropy, block similarity or user similarity reports.
    Analyze {
        #[arg(long, value_enum)]
        kind: AnalysisKind,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Analyze only the first N users.
        #[arg(long)]
        users: Option<usize>,
        /// Uniform-baseline draws per map.
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Time single attention blocks and fit scaling exponents.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "sa,ram")]
        kinds: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "64")]
        d: Vec<usize>,
        #[arg(long, default_value_t = 2)]
        heads: usize,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Val,
    Test,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisKind {
    Entropy,
    Blocksim,
    Usersim,
    RamBetaEntropy,
}

/// Exit status by failure class.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use ramrec::Error as E;
    match err.chain().find_map(|e| e.downcast_ref::<ramrec::Error>()) {
        Some(E::Config(_)) => 3,
        Some(E::Data(_) | E::Format(_) | E::Io(_) | E::Index(_)) => 4,
        Some(E::Numerical(_)) => 5,
        Some(_) => 1,
        None if err.chain().any(|e| e.is::<std::io::Error>()) => 4,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare { input, format, common } => commands::prepare(&common, &input, &format),
        Command::Train { data, resume, grid, common } => commands::train(&common, data, resume, &grid),
        Command::Eval { checkpoint, data, split, cutoffs, exclude_seen, common } => {
            commands::eval(&common, &checkpoint, data, split, &cutoffs, exclude_seen)
        }
        Command::Analyze { kind, checkpoint, data, users, repeats, common } => {
            commands::analyze(&common, kind, &checkpoint, data, users, repeats)
        }
        Command::Bench { kinds, n, d, heads, reps, common } => commands::bench(&common, &kinds, &n, &d, heads, reps),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
