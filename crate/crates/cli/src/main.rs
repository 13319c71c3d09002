//! `knaskit`: reproducible gradient-kernel architecture scoring and search.
//!
//! Exit codes: 0 success, 1 checked-property failure (bound violations,
//! divergence, numeric failures), 2 usage or contract errors, 3 I/O and
//! format errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use knaskit_core::error::Error;

#[derive(Parser)]
#[command(name = "knaskit", version, about = "Gradient-kernel architecture scoring and search")]
struct Cli {
    /// Flat key=value config file applied between defaults and flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Generic key=value overrides applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Worker threads (falls back to KNASKIT_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset or convert a CIFAR-10 binary directory.
    GenData(GenDataArgs),
    /// Score one architecture or a sampled set by MGM.
    Score(ScoreArgs),
    /// Run the top-k search or the random-search baseline.
    Search(SearchArgs),
    /// Correlate MGM scores with short-training validation accuracy.
    Correlate(CorrelateArgs),
    /// Simulate gradient flow and verify the convergence bound.
    VerifyBound(VerifyBoundArgs),
    /// Summarize a previous run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Data source: synth or cifar.
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    classes: Option<usize>,
    /// Training examples.
    #[arg(long)]
    n: Option<usize>,
    /// Validation examples.
    #[arg(long)]
    val_n: Option<usize>,
    /// Example shape, e.g. 3x8x8.
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory holding data_batch_*.bin / test_batch.bin (cifar source).
    #[arg(long)]
    cifar_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Dataset directory from gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Output run directory.
    #[arg(long)]
    out: PathBuf,
    /// One genotype in the 6-op text encoding.
    #[arg(long)]
    arch: Option<String>,
    /// Score this many sampled architectures instead.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// exact | layer_sampled | split_halves.
    #[arg(long)]
    estimator: Option<String>,
    /// output | loss.
    #[arg(long)]
    mode: Option<String>,
    /// Coordinates sampled per parameter tensor.
    #[arg(long)]
    m_samples: Option<usize>,
    /// Scoring batch size.
    #[arg(long)]
    batch_n: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    cells: Option<usize>,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// knas | random.
    #[arg(long)]
    policy: Option<String>,
    /// Architectures sampled.
    #[arg(long)]
    m: Option<usize>,
    /// Candidates kept for training.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// SGD minibatch size.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    m_samples: Option<usize>,
    #[arg(long)]
    batch_n: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    cells: Option<usize>,
}

#[derive(Args)]
struct CorrelateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Prior score run directory to pick trials from.
    #[arg(long)]
    from: Option<PathBuf>,
    /// Sample this many architectures instead of --from.
    #[arg(long)]
    sample: Option<usize>,
    /// Train records that lack accuracies.
    #[arg(long)]
    train: bool,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    m_samples: Option<usize>,
    #[arg(long)]
    batch_n: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    cells: Option<usize>,
}

#[derive(Args)]
struct VerifyBoundArgs {
    #[arg(long)]
    out: PathBuf,
    /// linear | mlp | cell.
    #[arg(long)]
    net: Option<String>,
    /// Genotype for --net cell.
    #[arg(long)]
    arch: Option<String>,
    /// Verify this many sampled genotypes (cell nets).
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Batch size n.
    #[arg(long)]
    n: Option<usize>,
    /// Vector input dimension (linear/mlp nets).
    #[arg(long)]
    input_dim: Option<usize>,
    /// Image shape for cell nets, e.g. 3x4x4.
    #[arg(long)]
    shape: Option<String>,
    /// Euler step; defaults to the stability guard.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    record_every: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Re-check a previously exported trajectory.csv instead of running.
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding report.json.
    #[arg(long)]
    run: PathBuf,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Contract(_) | Error::Parse(_) | Error::State(_) | Error::Shape { .. } => 2,
        Error::Io { .. } | Error::Format { .. } | Error::Json(_) => 3,
        Error::Numeric(_) | Error::NonFinite { .. } | Error::Diverged(_) => 1,
    }
}

fn init_threads(requested: Option<usize>) {
    let from_env = std::env::var("KNASKIT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = requested.or(from_env) {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads(cli.threads);

    let common = commands::Common {
        config: cli.config,
        overrides: cli.overrides,
    };
    let outcome = match cli.cmd {
        Cmd::GenData(args) => commands::gen_data(&common, args),
        Cmd::Score(args) => commands::score(&common, args),
        Cmd::Search(args) => commands::search(&common, args),
        Cmd::Correlate(args) => commands::correlate(&common, args),
        Cmd::VerifyBound(args) => commands::verify_bound(&common, args),
        Cmd::Report(args) => commands::report(&common, args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
