mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pathe_core::CoreError;

use crate::commands::UsageError;

#[derive(Parser, Debug)]
#[command(
    name = "pathe",
    version,
    about = "Path-based, entity-agnostic knowledge graph embeddings"
)]
struct Cli {
    /// Cap on worker threads for mining and evaluation (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Structural statistics and split counts of a graph.
    Stats(StatsArgs),
    /// Mine the path corpus.
    Mine(MineArgs),
    /// Train a model and write the best checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Project the positional table onto its first principal component.
    Positionals(PositionalsArgs),
}

#[derive(Args, Debug)]
pub struct SplitPaths {
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[command(flatten)]
    pub splits: SplitPaths,
    /// Also write per-relation frequencies as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MineArgs {
    /// Run config supplying dataset paths and mining settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub splits: SplitPaths,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub num_paths: Option<u64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Corpus file to write (default: the config's `corpus`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TaskArg {
    Rp,
    Lp,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (default: the config's `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Transductive,
    Inductive,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_enum, default_value = "transductive")]
    pub mode: ModeArg,
    /// Directory with the inference graph (`train.txt`, `valid.txt`, `test.txt`).
    #[arg(long)]
    pub inference_dir: Option<PathBuf>,
    /// `full` or a number of sampled corruptions per side (default: full
    /// transductive, 50 inductive).
    #[arg(long)]
    pub negatives: Option<String>,
    /// Fail unless the checkpoint was trained for this task.
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Report directory (default: next to the checkpoint).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PositionalsArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    if err.chain().any(|e| {
        e.downcast_ref::<CoreError>()
            .is_some_and(CoreError::is_numeric)
    }) {
        EXIT_NUMERIC
    } else {
        EXIT_DATA
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match cli.command {
        Command::Stats(a) => commands::stats(a),
        Command::Mine(a) => commands::mine(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Positionals(a) => commands::positionals(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
