use std::fs;
use std::path::{Path, PathBuf};

use slimbert::bench::{analytic_flops, is_baseline, sweep, BenchSpec};
use slimbert::gradcheck::{run_suite, GradCheckOptions, OpSuite};
use slimbert::model::load_checkpoint;
use slimbert::train::{finetune_classifier, pretrain_mlm, ClassificationTask, RunStatus, SyntheticTask, TrainConfig};
use slimbert::{
    build_stack, count_parameters, size_ratio, CheckpointError, EncoderConfig, Error, IntermediatePeriod, OpKind,
    ParamCount,
};

use crate::exit;

/// Prints the error and maps it to an exit code.
fn fail(err: Error) -> u8 {
    eprintln!("error: {err}");
    match err {
        Error::Io(_) => exit::IO,
        Error::Checkpoint(CheckpointError::ConfigMismatch { .. } | CheckpointError::VersionMismatch { .. }) => {
            exit::USAGE
        }
        Error::Checkpoint(_) => exit::IO,
        Error::Measurement(_) => exit::FAILED_CHECK,
        _ => exit::USAGE,
    }
}

macro_rules! attempt {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(err) => return fail(err.into()),
        }
    };
}

fn load_encoder(path: Option<PathBuf>) -> slimbert::Result<EncoderConfig> {
    match path {
        Some(p) => EncoderConfig::load(&p),
        None => Ok(EncoderConfig::toy()),
    }
}

fn load_train(path: Option<PathBuf>, seed: Option<u64>) -> slimbert::Result<TrainConfig> {
    let mut c = match path {
        Some(p) => TrainConfig::load(&p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        c.seed = s;
    }
    Ok(c)
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> slimbert::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn millions(n: u64) -> String {
    format!("{:.2}M", n as f64 / 1e6)
}

const PARAMS_HEADER: &str = "variant,embeddings,attention,intermediate,layernorms,pooler,total,size_ratio";

fn params_row(name: &str, c: &ParamCount, ratio: f64) -> String {
    format!(
        "{name},{},{},{},{},{},{},{ratio:.4}",
        c.embeddings, c.attention, c.intermediate, c.layernorms, c.pooler, c.total
    )
}

/// The BERT-base matrix: every intermediate period crossed with the
/// normalized-attention and no-feed-forward-layernorm flags.
fn table1_matrix() -> Vec<EncoderConfig> {
    let base = EncoderConfig::bert_base();
    let periods = [
        IntermediatePeriod::Every(1),
        IntermediatePeriod::Every(2),
        IntermediatePeriod::Every(3),
        IntermediatePeriod::Every(4),
        IntermediatePeriod::Every(6),
        IntermediatePeriod::None,
    ];
    let mut out = Vec::new();
    for (bandd, nomlpln) in [(false, false), (true, false), (false, true), (true, true)] {
        for p in periods {
            let mut c = base.clone().with_period(p);
            if bandd {
                c = c.with_bandd();
            }
            if nomlpln {
                c = c.with_no_mlp_layernorm();
            }
            out.push(c);
        }
    }
    out
}

pub fn count_params(config: Option<PathBuf>, table1: bool, out: Option<PathBuf>) -> u8 {
    let mut csv = vec![PARAMS_HEADER.to_string()];
    if let Some(path) = config {
        let c = attempt!(EncoderConfig::load(&path));
        attempt!(c.validate());
        let count = count_parameters(&c);
        let baseline = count_parameters(&EncoderConfig { period: IntermediatePeriod::Every(1), ..c.clone() });
        let ratio = attempt!(size_ratio(&baseline, &count));
        println!("{} ({})", c.variant_name(), path.display());
        for (part, n) in [
            ("embeddings", count.embeddings),
            ("attention", count.attention),
            ("intermediate", count.intermediate),
            ("layernorms", count.layernorms),
            ("pooler", count.pooler),
        ] {
            println!("  {part:<13} {n:>12}");
        }
        println!("  {:<13} {:>12}  ({})  ratio={ratio:.2}x vs every:1", "total", count.total, millions(count.total));
        csv.push(params_row(&c.variant_name(), &count, ratio));
    }
    if table1 {
        let base = count_parameters(&EncoderConfig::bert_base());
        println!("{:<26} {:>12} {:>9} {:>7}", "variant", "params", "", "ratio");
        for c in table1_matrix() {
            let count = count_parameters(&c);
            let ratio = attempt!(size_ratio(&base, &count));
            let name = c.variant_name();
            println!("{name:<26} {:>12} {:>9} {ratio:>6.2}x", count.total, millions(count.total));
            csv.push(params_row(&name, &count, ratio));
        }
    }
    if let Some(dir) = out {
        attempt!(write(&dir, "params.csv", csv.join("\n") + "\n"));
    }
    exit::OK
}

fn report_status(status: RunStatus) -> u8 {
    println!("# status={status}");
    if status.is_diverged() {
        exit::DIVERGED
    } else {
        exit::OK
    }
}

pub fn train(config: Option<PathBuf>, train_config: Option<PathBuf>, out: &Path, seed: Option<u64>) -> u8 {
    let encoder = attempt!(load_encoder(config));
    let tc = attempt!(load_train(train_config, seed));
    let mut stack = attempt!(build_stack(&encoder, tc.seed));
    let task = SyntheticTask::for_run(&tc, encoder.vocab_size);
    let outcome = attempt!(pretrain_mlm(&mut stack, &task, &tc));
    attempt!(write(out, "runlog.csv", outcome.log.to_csv()));
    attempt!(write(out, "checkpoint.slfm", &outcome.checkpoint));
    println!(
        "{}: {} steps, eval loss {:.4} -> {:.4}",
        encoder.variant_name(),
        outcome.log.records().len(),
        outcome.initial_eval_loss,
        outcome.final_eval_loss
    );
    report_status(outcome.log.status().unwrap_or(RunStatus::Completed))
}

pub fn finetune(config: Option<PathBuf>, train_config: Option<PathBuf>, out: &Path, seed: Option<u64>) -> u8 {
    let encoder = attempt!(load_encoder(config));
    let tc = attempt!(load_train(train_config, seed));
    let bytes = attempt!(fs::read(out.join("checkpoint.slfm")));
    // Surface config mismatches before generating any data.
    attempt!(load_checkpoint(&bytes, &encoder));
    let task = ClassificationTask {
        vocab_size: encoder.vocab_size,
        seq_len: tc.seq_len,
        train_size: tc.train_sequences,
        eval_size: tc.eval_sequences,
        seed: tc.seed,
    };
    let report = attempt!(finetune_classifier(&bytes, &encoder, &task, &tc));
    attempt!(write(out, "finetune.csv", report.log.to_csv()));
    println!("{}: accuracy {:.4} -> {:.4}", encoder.variant_name(), report.initial_accuracy, report.final_accuracy);
    report_status(report.log.status().unwrap_or(RunStatus::Completed))
}

pub struct BenchArgs {
    pub configs: Vec<PathBuf>,
    pub baseline: PathBuf,
    pub batches: Vec<usize>,
    pub seq_lens: Vec<usize>,
    pub threads: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn bench(args: BenchArgs) -> u8 {
    let baseline = attempt!(EncoderConfig::load(&args.baseline));
    if !is_baseline(&baseline) {
        return fail(Error::config(
            "baseline-config",
            "the baseline must use every:1, softmax attention and both layernorms",
        ));
    }
    let mut configs = vec![baseline];
    for p in &args.configs {
        configs.push(attempt!(EncoderConfig::load(p)));
    }
    let specs: Vec<BenchSpec> = configs
        .into_iter()
        .map(|c| BenchSpec {
            iterations: args.iterations,
            warmup: args.warmup,
            threads: args.threads,
            seed: args.seed,
            ..BenchSpec::new(c, args.batches.clone(), args.seq_lens.clone())
        })
        .collect();
    let report = attempt!(sweep(&specs));
    attempt!(write(&args.out, "bench.csv", report.to_csv()));
    attempt!(write(&args.out, "bench.plot", report.to_plot_data()));
    println!(
        "{:<26} {:>5} {:>7} {:>14} {:>9} {:>10}",
        "variant", "batch", "seq_len", "tokens/s", "speedup", "flop_ratio"
    );
    for r in &report.rows {
        println!(
            "{:<26} {:>5} {:>7} {:>14.1} {:>8.3}x {:>9.3}x",
            r.variant, r.batch, r.seq_len, r.tokens_per_sec_median, r.speedup_vs_baseline, r.flop_ratio_vs_baseline
        );
    }
    for f in &report.failures {
        eprintln!("failed: {} batch={} seq_len={}: {}", f.variant, f.batch, f.seq_len, f.reason);
    }
    exit::OK
}

pub fn grad_check(config: Option<PathBuf>, ops: &str, corrupt: Option<&str>) -> u8 {
    let encoder = attempt!(load_encoder(config));
    let suite: OpSuite = attempt!(ops.parse());
    let fault = match corrupt {
        Some(name) => match OpKind::from_name(name) {
            Some(k) => Some(k),
            None => return fail(Error::config("corrupt-op", format!("unknown op `{name}`"))),
        },
        None => None,
    };
    let opts = GradCheckOptions { max_elements: Some(64), fault, ..GradCheckOptions::default() };
    let reports = attempt!(run_suite(&encoder, suite, &opts));
    let mut failed = Vec::new();
    for r in &reports {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<28} max_rel_err={:.3e} {verdict}", r.name, r.max_rel_error());
        if !r.passed() {
            failed.push(r.name.clone());
        }
    }
    let worst = reports.iter().map(|r| r.max_rel_error()).fold(0.0, f64::max);
    if failed.is_empty() {
        println!("passed: {} cases, max_rel_err={worst:.3e} (tolerance {:e})", reports.len(), opts.tolerance);
        exit::OK
    } else {
        println!("failed: {}", failed.join(", "));
        exit::FAILED_CHECK
    }
}

pub const COMPARE_HEADER: &str = "variant,params,flops_forward,initial_eval_loss,final_eval_loss,status";

pub fn compare(
    paths: &[PathBuf],
    task: &str,
    steps: usize,
    train_config: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> u8 {
    if task != "mlm" {
        return fail(Error::config("task", format!("only `mlm` is supported, got `{task}`")));
    }
    if paths.len() < 2 {
        return fail(Error::config("configs", "compare needs at least two configs"));
    }
    let mut tc = attempt!(load_train(train_config, seed));
    tc.total_steps = steps;
    tc.warmup_steps = tc.warmup_steps.min(steps);
    attempt!(tc.validate());
    // Build everything before training anything.
    let mut stacks = Vec::new();
    for p in paths {
        let c = attempt!(EncoderConfig::load(p));
        stacks.push(attempt!(build_stack(&c, tc.seed)));
    }
    let mut rows = vec![COMPARE_HEADER.to_string()];
    let mut diverged = false;
    for stack in &mut stacks {
        let c = stack.config().clone();
        let task = SyntheticTask::for_run(&tc, c.vocab_size);
        let outcome = attempt!(pretrain_mlm(stack, &task, &tc));
        let status = outcome.log.status().unwrap_or(RunStatus::Completed);
        diverged |= status.is_diverged();
        rows.push(format!(
            "{},{},{},{:?},{:?},{status}",
            c.variant_name(),
            count_parameters(&c).total,
            analytic_flops(&c, tc.batch_size, tc.seq_len),
            outcome.initial_eval_loss,
            outcome.final_eval_loss
        ));
    }
    let text = rows.join("\n") + "\n";
    print!("{text}");
    if let Some(dir) = out {
        attempt!(write(&dir, "compare.csv", &text));
    }
    if diverged {
        exit::DIVERGED
    } else {
        exit::OK
    }
}
