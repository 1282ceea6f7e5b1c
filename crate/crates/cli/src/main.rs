//! `slimbert`: count, train, fine-tune, benchmark, gradient-check and
//! compare encoder variants.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit codes shared by every subcommand.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILED_CHECK: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const DIVERGED: u8 = 3;
    pub const IO: u8 = 4;
}

#[derive(Parser, Debug)]
#[command(name = "slimbert", version, about = "Encoder variant workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Encoder config file; the toy encoder when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training config file; toy defaults when omitted.
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Seeds both parameter initialization and training.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parameter breakdown of a config, or the full BERT-base variant table.
    CountParams {
        #[arg(long, required_unless_present = "table1")]
        config: Option<PathBuf>,
        #[arg(long)]
        table1: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Masked-LM pre-training; writes runlog.csv and checkpoint.slfm.
    Train(RunArgs),
    /// Classification fine-tuning from <out>/checkpoint.slfm; writes finetune.csv.
    Finetune(RunArgs),
    /// Inference throughput sweep against a baseline; writes bench.csv and bench.plot.
    Bench {
        /// One or more variant configs, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        config: Vec<PathBuf>,
        #[arg(long)]
        baseline_config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "32")]
        batch: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "128")]
        seqlens: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, default_value_t = 5)]
        iterations: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable op at the config's shapes.
    GradCheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "all")]
        ops: String,
        /// Corrupts one op's backward rule to exercise failure reporting.
        #[arg(long, hide = true)]
        corrupt_op: Option<String>,
    },
    /// Trains several configs on the same task and tabulates the results.
    Compare {
        #[arg(long, value_delimiter = ',', required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, default_value = "mlm")]
        task: String,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::CountParams { config, table1, out } => commands::count_params(config, table1, out),
        Command::Train(a) => commands::train(a.config, a.train_config, &a.out, a.seed),
        Command::Finetune(a) => commands::finetune(a.config, a.train_config, &a.out, a.seed),
        Command::Bench { config, baseline_config, batch, seqlens, threads, iterations, warmup, seed, out } => {
            commands::bench(commands::BenchArgs {
                configs: config,
                baseline: baseline_config,
                batches: batch,
                seq_lens: seqlens,
                threads,
                iterations,
                warmup,
                seed,
                out,
            })
        }
        Command::GradCheck { config, ops, corrupt_op } => commands::grad_check(config, &ops, corrupt_op.as_deref()),
        Command::Compare { configs, task, steps, train_config, seed, out } => {
            commands::compare(&configs, &task, steps, train_config, seed, out)
        }
    };
    ExitCode::from(code)
}
