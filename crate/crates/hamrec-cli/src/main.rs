//! `hamrec`: binary-code recommendation pipeline.
//!
//! Subcommands wire the library end to end: `prep` builds splits from an
//! interaction log, `train` fits the code model, `export` writes packed
//! codes, `eval` scores them on the held-out split, `retrieve` serves
//! top-k queries, and `bench` measures the scan throughput.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation, bad config, malformed input artifacts. Exit code 1.
    Validation(String),
    /// Failure while doing the work. Exit code 2.
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "hamrec",
    version,
    about = "Binary-code recommendation: train, export, retrieve, evaluate"
)]
struct Cli {
    /// key = value config file; explicit flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed; every random component derives its stream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (fallback: HAMREC_WORKERS, then all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load an interaction TSV, dedup, split train/test, write artifacts.
    Prep(PrepArgs),
    /// Train binary codes on prepared artifacts.
    Train(TrainArgs),
    /// Export hard codes from a checkpoint.
    Export(ExportArgs),
    /// Score exported codes on a held-out split.
    Eval(EvalArgs),
    /// Serve top-k queries over exported item codes.
    Retrieve(RetrieveArgs),
    /// Measure packed-scan throughput against a real-valued scan.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct PrepArgs {
    /// Interaction log: user<TAB>item[<TAB>timestamp][<TAB>rating].
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Output directory for split artifacts.
    #[arg(long, value_name = "DIR", default_value = "hamrec_out")]
    pub out_dir: PathBuf,
    /// leave-last-one | leave-random-k:<k> | ratio:<p>.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory holding prep artifacts.
    #[arg(long, value_name = "DIR", default_value = "hamrec_out")]
    pub data_dir: PathBuf,
    /// Output directory (defaults to --data-dir).
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Resume from an existing checkpoint file.
    #[arg(long, value_name = "FILE")]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Triples per epoch; "auto" uses the fit edge count.
    #[arg(long)]
    pub triples_per_epoch: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// L2 coefficient on touched embedding rows.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<u32>,
    #[arg(long)]
    pub patience: Option<u32>,
    /// edge-proportional | uniform-user.
    #[arg(long)]
    pub user_sampling: Option<String>,
    #[arg(long)]
    pub bits: Option<u32>,
    #[arg(long)]
    pub layers: Option<u32>,
    #[arg(long)]
    pub self_weight: Option<f64>,
    #[arg(long)]
    pub normalize_neighbors: Option<bool>,
    /// last-layer | mean-then-sign.
    #[arg(long)]
    pub readout: Option<String>,
    #[arg(long)]
    pub beta0: Option<f64>,
    #[arg(long)]
    pub beta_growth: Option<f64>,
    #[arg(long)]
    pub beta_period: Option<u32>,
    #[arg(long)]
    pub beta_max: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Checkpoint to export from.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Directory holding train artifacts (fit split).
    #[arg(long, value_name = "DIR", default_value = "hamrec_out")]
    pub data_dir: PathBuf,
    /// Output directory (defaults to --data-dir).
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub bits: Option<u32>,
    #[arg(long)]
    pub layers: Option<u32>,
    #[arg(long)]
    pub self_weight: Option<f64>,
    #[arg(long)]
    pub normalize_neighbors: Option<bool>,
    #[arg(long)]
    pub readout: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub user_codes: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub item_codes: Option<PathBuf>,
    /// Held-out events to score (dense-id artifact).
    #[arg(long, value_name = "FILE")]
    pub test: Option<PathBuf>,
    /// Events whose items are excluded per user (dense-id artifact).
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,
    /// Directory used to locate defaults for the files above.
    #[arg(long, value_name = "DIR", default_value = "hamrec_out")]
    pub data_dir: PathBuf,
    /// Output directory (defaults to --data-dir).
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Comma-separated cutoffs, e.g. 10,20.
    #[arg(long)]
    pub ks: Option<String>,
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    #[arg(long, value_name = "FILE")]
    pub item_codes: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub user_codes: Option<PathBuf>,
    #[arg(long, value_name = "DIR", default_value = "hamrec_out")]
    pub data_dir: PathBuf,
    /// Single user id to query.
    #[arg(long)]
    pub user: Option<u32>,
    /// Query batch: one user id or hex-encoded code per line.
    #[arg(long, value_name = "FILE")]
    pub queries: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Exclude each queried user's train items (dense-id artifact).
    #[arg(long, value_name = "FILE")]
    pub exclude_train: Option<PathBuf>,
    /// Band count for probe mode; scans exactly when absent.
    #[arg(long)]
    pub bands: Option<u32>,
    /// Probe radius per band.
    #[arg(long)]
    pub radius: Option<u32>,
    /// Write results here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Item codes to scan; omit to use synthetic codes.
    #[arg(long, value_name = "FILE")]
    pub item_codes: Option<PathBuf>,
    /// Synthetic item count when no code file is given.
    #[arg(long, default_value_t = 100_000)]
    pub synthetic_items: usize,
    /// Number of random queries.
    #[arg(long, default_value_t = 1000)]
    pub queries: usize,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Code length for synthetic items.
    #[arg(long)]
    pub bits: Option<u32>,
    /// Write the report here as well as stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    // Re-derive the component seeds whether or not the flag is present, so
    // a file-provided seed also reaches every component.
    let seed = cli.seed.unwrap_or(cfg.seed);
    cfg.set_seed(seed);
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    init_workers(cfg.workers)?;

    match cli.command {
        Command::Prep(args) => commands::prep(cfg, args),
        Command::Train(args) => commands::train(cfg, args),
        Command::Export(args) => commands::export(cfg, args),
        Command::Eval(args) => commands::eval(cfg, args),
        Command::Retrieve(args) => commands::retrieve(cfg, args),
        Command::Bench(args) => commands::bench(cfg, args),
    }
}

/// Sizes the global worker pool from --workers or HAMREC_WORKERS.
fn init_workers(flag: Option<usize>) -> Result<(), CliError> {
    let from_env = std::env::var("HAMREC_WORKERS")
        .ok()
        .map(|v| {
            v.parse::<usize>()
                .map_err(|e| CliError::Validation(format!("bad HAMREC_WORKERS: {e}")))
        })
        .transpose()?;
    if let Some(n) = flag.or(from_env) {
        if n == 0 {
            return Err(CliError::Validation("workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("worker pool: {e}")))?;
    }
    Ok(())
}
