mod commands;
mod query;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pnc::PncError;

/// Train probabilistic neural circuits and answer tractable queries.
#[derive(Debug, Parser)]
#[command(name = "pnc", version)]
struct Cli {
    /// Cap on worker threads for per-sample work.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write the best-validation checkpoint.
    Train(TrainArgs),
    /// Per-sample log-densities and bits per dimension.
    Eval(EvalArgs),
    /// Log-marginals for evidence records with an order-suffix summed out.
    Marginal(MarginalArgs),
    /// Class posteriors of a class-conditional model.
    Classify(ClassifyArgs),
    /// Check normalization, marginals and gradients against brute force.
    Validate(ValidateArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Config file; all keys fall back to their defaults when omitted.
    #[arg(long)]
    config: Option<std::path::PathBuf>,
    /// IDX image file (overrides `images` in the config).
    #[arg(long)]
    images: Option<std::path::PathBuf>,
    /// IDX label file (overrides `labels` in the config).
    #[arg(long)]
    labels: Option<std::path::PathBuf>,
    #[arg(long)]
    out: std::path::PathBuf,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: std::path::PathBuf,
    #[arg(long)]
    images: std::path::PathBuf,
}

#[derive(Debug, Args)]
struct MarginalArgs {
    #[arg(long)]
    checkpoint: std::path::PathBuf,
    /// IDX image file or text file with one record per line.
    #[arg(long)]
    evidence_file: std::path::PathBuf,
    /// `all`, `none`, `ranks:9-16` (1-based induced-order ranks) or
    /// `vars:3,7` (0-based variable ids).
    #[arg(long)]
    marginalize: String,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long)]
    checkpoint: std::path::PathBuf,
    #[arg(long)]
    images: std::path::PathBuf,
    /// When given, accuracy is reported after the per-sample lines.
    #[arg(long)]
    labels: Option<std::path::PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    checkpoint: Option<std::path::PathBuf>,
    /// Validate freshly randomized models built from this config.
    #[arg(long)]
    config: Option<std::path::PathBuf>,
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Negative control: evaluate with unnormalized sum weights.
    #[arg(long, hide = true)]
    corrupt_normalization: bool,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    checkpoint: Option<std::path::PathBuf>,
    #[arg(long)]
    config: Option<std::path::PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random assignments in the checked batch.
    #[arg(long, default_value_t = 2)]
    samples: usize,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    ChecksFailed,
}

fn exit_code(err: &PncError) -> u8 {
    match err {
        PncError::Config { .. } | PncError::InvalidStructure(_) => 2,
        PncError::Input(_)
        | PncError::Format { .. }
        | PncError::Checksum(_)
        | PncError::FingerprintMismatch { .. }
        | PncError::Io { .. } => 3,
        PncError::OrderViolation { .. } | PncError::Unsupported(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        pnc::exec::set_thread_count(n.max(1));
    }
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Marginal(a) => commands::marginal(a),
        Command::Classify(a) => commands::classify(a),
        Command::Validate(a) => commands::validate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::ChecksFailed) => ExitCode::from(5),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
