//! `rddl-transfer`: generate instances, train, evaluate and transfer.
//!
//! Exit codes: 0 success, 1 usage, 2 IO or parse error, 3 runtime error.

mod commands;
mod manifest;
mod tables;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Runtime(String),
}

impl CliError {
    pub fn usage(e: impl fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }

    pub fn io(e: impl fmt::Display) -> Self {
        CliError::Io(e.to_string())
    }

    pub fn runtime(e: impl fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rddl-transfer", version, about = "Size-independent neural transfer for factored-MDP planning")]
struct Cli {
    /// Maximum worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a random problem instance.
    Gen(GenArgs),
    /// Train on the instances of a manifest.
    Train(TrainArgs),
    /// Estimate policy values on an instance.
    Eval(EvalArgs),
    /// Zero-shot evaluation followed by fine-tuning, as a learning curve.
    Transfer(TransferArgs),
    /// Merge learning-curve files into one table.
    Plotdata(PlotdataArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub domain: String,
    #[arg(long)]
    pub size: usize,
    /// random, grid or dag (default depends on the domain).
    #[arg(long)]
    pub topology: Option<String>,
    #[arg(long)]
    pub edge_prob: Option<f64>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, default_value_t = rddl_transfer::eval::DEFAULT_RUNS)]
    pub runs: usize,
    /// Comma-separated baselines: random, noop, greedy or a full name
    /// (sysadmin_greedy, gol_greedy, acad_greedy).
    #[arg(long, value_delimiter = ',')]
    pub baselines: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub instance: PathBuf,
    /// Fine-tuning seconds; 0 gives the zero-shot point only.
    #[arg(long, default_value_t = 0.0)]
    pub budget: f64,
    /// Seconds between evaluated checkpoints (default: budget / 5).
    #[arg(long)]
    pub interval: Option<f64>,
    #[arg(long, default_value_t = rddl_transfer::eval::DEFAULT_RUNS)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Curve CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the baseline evaluations that anchor alpha.
    #[arg(long)]
    pub anchors: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotdataArgs {
    #[arg(long, num_args = 0..)]
    pub curves: Vec<PathBuf>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(CliError::runtime)?;
    }
    match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a, cli.threads),
        Command::Eval(a) => commands::eval(a),
        Command::Transfer(a) => commands::transfer(a, cli.threads),
        Command::Plotdata(a) => commands::plotdata(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
