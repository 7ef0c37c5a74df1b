//! `arccap`: ingest, train, decode, evaluate and self-check from the
//! command line. Exit codes: 0 success, 1 usage, 2 data or format error,
//! 3 numeric or convergence failure.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(arccap_core::Error),
    /// An oracle suite disagreed with a solver.
    Check(String),
}

impl From<arccap_core::Error> for CliError {
    fn from(e: arccap_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Check(m) => write!(f, "self-check failed: {m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(_) => 2,
            CliError::Check(_) => 3,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "arccap", version, about = "Captioning with adversarial robust cuts")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// COCO captions JSON.
    #[arg(long, global = true)]
    annotations: Option<PathBuf>,

    /// Regions JSON (image id -> boxes, features, tags).
    #[arg(long, global = true)]
    regions: Option<PathBuf>,

    /// Explicit split file; omit for a seeded ratio split.
    #[arg(long, global = true)]
    split: Option<PathBuf>,

    /// Work directory for all artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Beam size for decoding (default 2).
    #[arg(long, global = true)]
    beam: Option<usize>,

    /// Weight of the cut marginals in decoding.
    #[arg(long, global = true)]
    lambda: Option<f64>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse annotations and regions, split, build the vocabulary.
    Ingest,
    /// Train the convolutional captioner.
    TrainCaptioner,
    /// Train the cut potentials on region graphs.
    TrainArc,
    /// Beam-decode the test split with and without cut fusion.
    Decode,
    /// Score prediction files against reference captions.
    Eval {
        /// Predictions JSON; repeatable. Defaults to every
        /// predictions.*.json in the work directory.
        #[arg(long)]
        predictions: Vec<PathBuf>,
    },
    /// Run the exhaustive oracle suites.
    Selfcheck,
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let p = &mut cfg.paths;
    for (slot, flag) in [
        (&mut p.annotations, &cli.annotations),
        (&mut p.regions, &cli.regions),
        (&mut p.split, &cli.split),
        (&mut p.out, &cli.out),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if let Some(b) = cli.beam {
        cfg.decode.beam_size = b;
    }
    if let Some(l) = cli.lambda {
        cfg.decode.fusion_lambda = l;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot set up {} threads: {e}", cfg.threads)))?;
    }
    match &cli.command {
        Command::Ingest => commands::ingest(&cfg),
        Command::TrainCaptioner => commands::train_captioner(&cfg),
        Command::TrainArc => commands::train_arc(&cfg),
        Command::Decode => commands::decode(&cfg),
        Command::Eval { predictions } => commands::eval(&cfg, predictions),
        Command::Selfcheck => commands::run_selfcheck(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ARCCAP_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("arccap: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
