//! `rfmsm`: generate synthetic radar corpora, pretrain masked autoencoders,
//! fine-tune n-shot classifiers, evaluate, sweep masking settings, export
//! embeddings and plot results.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Input problem (bad config, bad file, bad argument): exit code 1.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser, Debug)]
#[command(name = "rfmsm", version, about = "Masked signal modelling for few-shot radar signal recognition")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file (or directory for `sweep`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for `sweep`.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Replace every seed in the config.
    #[arg(long, global = true)]
    pub seed_override: Option<u64>,
    /// Single-threaded execution; outputs are byte-reproducible.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset from the generator section.
    Generate {
        /// Which entry of generator.sets to produce.
        #[arg(long, default_value = "corpus")]
        set: String,
    },
    /// Masked-reconstruction pretraining on an unlabeled corpus.
    Pretrain {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Fine-tune a pretrained encoder on n shots drawn from a labeled pool.
    Finetune {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Train the same classifier from a random encoder.
    Baseline {
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Metrics of a classifier on a labeled test set.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Pretrain, fine-tune and evaluate every strategy x ratio cell.
    Sweep {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// PCA-reduced encoder embeddings of a dataset.
    Embed {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
    },
    /// SVG heatmap from a sweep CSV, or accuracy-vs-SNR curves from metrics JSON.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Summarize a checkpoint, dataset or embedding file.
    Inspect { file: PathBuf },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Invalid>().is_some() {
        return 1;
    }
    match err.downcast_ref::<rfmsm_core::Error>() {
        Some(e) if e.is_validation() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("RFMSM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
