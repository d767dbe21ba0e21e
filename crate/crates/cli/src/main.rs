//! `samrl`: corpus generation, pretraining, RL training, evaluation and
//! ablation grids for multi-trait essay scoring.
//!
//! Logs go to standard error; every artifact goes under `--out` together
//! with a `manifest-*.json` describing the run. Exit status is 0 when every
//! requested artifact was produced, 2 when an ablation finished with failed
//! folds and 1 on error.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use samrl::ppo::Variant;

use commands::{RunContext, Split, TrainerOverrides};
use manifest::RunStatus;

#[derive(Parser, Debug)]
#[command(name = "samrl", version, about = "Multi-reward RL for autoregressive multi-trait essay scoring")]
struct Cli {
    /// TOML config with optional [corpus] [policy] [pretrain] [trainer] [experiment] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; also reseeds the synthetic corpus.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "samrl-out")]
    out: PathBuf,
    /// Prompt schema as JSON; defaults to the built-in eight-prompt schema.
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct FoldArgs {
    /// JSON-lines corpus written by `gen-corpus`.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Seed repetition within the fold.
    #[arg(long, default_value_t = 0)]
    rep: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the corpus with fold assignments.
    GenCorpus {
        /// Ingest a tab-separated scored-essay file instead of generating.
        #[arg(long)]
        from_tsv: Option<PathBuf>,
    },
    /// Supervised training with dev-set early stopping.
    Pretrain {
        #[command(flatten)]
        fold: FoldArgs,
    },
    /// RL fine-tuning of a pretrained checkpoint.
    Train {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        fold: FoldArgs,
        /// arts, samrl-biq, samrl-uniq-t, samrl-uniq-b, sasrl-m, sasrl-q or fixed-<wq>-<wm>.
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        clip_epsilon: Option<f64>,
        #[arg(long)]
        lambda_q: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        updates: Option<usize>,
    },
    /// Greedy evaluation of a checkpoint on one split.
    Eval {
        #[arg(long, required_unless_present = "oracle_gold")]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        fold: FoldArgs,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        /// Score the gold targets against themselves.
        #[arg(long)]
        oracle_gold: bool,
        /// Model name used in reports and file names.
        #[arg(long)]
        name: Option<String>,
    },
    /// Cross-validated ablation grid with a baseline-relative comparison table.
    Ablate {
        /// Corpus file; the configured synthetic corpus is generated when absent.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Comma-separated variants; defaults to the full nine-variant grid.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<Variant>,
        /// Variants trained concurrently per fold.
        #[arg(long, env = "SAMRL_WORKERS", default_value_t = 1)]
        workers: usize,
    },
    /// Combine report JSON files into CSV tables.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Model name to compare aggregate reports against.
        #[arg(long)]
        baseline: Option<String>,
    },
}

fn run(cli: Cli) -> Result<RunStatus> {
    let config = config::load_config(cli.config.as_deref(), cli.seed)?;
    let schema = config::load_schema(cli.schema.as_deref())?;
    let ctx = RunContext { config, schema, out: cli.out };
    match cli.command {
        Command::GenCorpus { from_tsv } => commands::gen_corpus(&ctx, from_tsv.as_deref()),
        Command::Pretrain { fold } => commands::pretrain(&ctx, &fold.corpus, fold.fold, fold.rep),
        Command::Train { checkpoint, fold, variant, beta, clip_epsilon, lambda_q, gamma, updates } => {
            let overrides = TrainerOverrides { beta, clip_epsilon, lambda_q, gamma, updates };
            commands::train(&ctx, &checkpoint, &fold.corpus, fold.fold, fold.rep, variant.as_ref(), &overrides)
        }
        Command::Eval { checkpoint, fold, split, oracle_gold, name } => commands::eval(
            &ctx,
            checkpoint.as_deref(),
            &fold.corpus,
            fold.fold,
            split,
            oracle_gold,
            name.as_deref(),
        ),
        Command::Ablate { corpus, variants, workers } => commands::ablate(&ctx, corpus.as_deref(), &variants, workers),
        Command::Report { inputs, baseline } => commands::report(&ctx, &inputs, baseline.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    match run(Cli::parse()) {
        Ok(RunStatus::Completed) => ExitCode::SUCCESS,
        Ok(RunStatus::Partial) => {
            log::error!("finished with failures; see the manifest");
            ExitCode::from(2)
        }
        Ok(RunStatus::Failed) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
