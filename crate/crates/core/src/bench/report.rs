//! Variant sweeps and their CSV and plot-data forms.

use std::collections::HashMap;

use crate::config::{AttentionKind, AttnLayerNorm, EncoderConfig, IntermediatePeriod, MlpLayerNorm};
use crate::error::{Error, Result};
use crate::model::{build_stack, EncoderStack};

use super::flops::analytic_flops;
use super::throughput::{BenchSpec, ShapeTimer, Throughput};

pub const BENCH_HEADER: &str = "variant,batch,seq_len,threads,tokens_per_sec_median,tokens_per_sec_min,tokens_per_sec_max,flops_forward,speedup_vs_baseline,flop_ratio_vs_baseline";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub variant: String,
    pub batch: usize,
    pub seq_len: usize,
    pub threads: usize,
    pub tokens_per_sec_median: f64,
    pub tokens_per_sec_min: f64,
    pub tokens_per_sec_max: f64,
    pub flops_forward: u64,
    /// Median throughput relative to the baseline row of the same shape.
    pub speedup_vs_baseline: f64,
    /// Baseline FLOPs divided by this row's FLOPs.
    pub flop_ratio_vs_baseline: f64,
}

/// A shape that could not be measured; the sweep carries on without it.
#[derive(Debug, Clone, PartialEq)]
pub struct RowFailure {
    pub variant: String,
    pub batch: usize,
    pub seq_len: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub failures: Vec<RowFailure>,
}

/// True for the unmodified encoder every variant is compared against.
pub fn is_baseline(config: &EncoderConfig) -> bool {
    config.period == IntermediatePeriod::Every(1)
        && config.attention_kind == AttentionKind::Softmax
        && config.mlp_layernorm == MlpLayerNorm::Keep
        && config.attn_layernorm == AttnLayerNorm::Keep
}

/// Measures every spec over its full batch × sequence-length grid and
/// relates each row to the baseline spec's row of the same shape.
///
/// Within a shape, timed iterations rotate across variants so that slow
/// drift in host load hits every variant alike. All stacks stay alive for
/// the whole sweep.
pub fn sweep(specs: &[BenchSpec]) -> Result<BenchReport> {
    let Some(base_idx) = specs.iter().position(|s| is_baseline(&s.config)) else {
        return Err(Error::Contract("a sweep needs a baseline variant".into()));
    };
    for spec in specs {
        let mut grid = spec.clone();
        grid.seq_lens = vec![1];
        grid.validate()?;
    }
    let base_config = &specs[base_idx].config;
    let stacks: Vec<Result<EncoderStack>> = specs.iter().map(|s| build_stack(&s.config, s.seed)).collect();

    let mut shapes: Vec<(usize, usize)> = Vec::new();
    for spec in specs {
        for &b in &spec.batches {
            for &s in &spec.seq_lens {
                if !shapes.contains(&(b, s)) {
                    shapes.push((b, s));
                }
            }
        }
    }
    let mut outcomes: HashMap<(usize, usize, usize), std::result::Result<Throughput, String>> = HashMap::new();
    for &(batch, seq_len) in &shapes {
        let mut timers = Vec::new();
        for (idx, spec) in specs.iter().enumerate() {
            if !spec.batches.contains(&batch) || !spec.seq_lens.contains(&seq_len) {
                continue;
            }
            let timer = match &stacks[idx] {
                Err(e) => Err(e.to_string()),
                Ok(_) if seq_len == 0 || seq_len > spec.config.max_position => {
                    Err(Error::config("seq_len", format!("{seq_len} is outside 1..={}", spec.config.max_position))
                        .to_string())
                }
                Ok(stack) => ShapeTimer::new(stack, spec, batch, seq_len)
                    .and_then(|t| t.warm_up().map(|()| t))
                    .map_err(|e| e.to_string()),
            };
            match timer {
                Ok(t) => timers.push((idx, t)),
                Err(reason) => {
                    outcomes.insert((idx, batch, seq_len), Err(reason));
                }
            }
        }
        while !timers.is_empty() {
            let mut pending = Vec::with_capacity(timers.len());
            for (idx, mut timer) in timers {
                if let Err(e) = timer.sample() {
                    outcomes.insert((idx, batch, seq_len), Err(e.to_string()));
                } else if timer.done() {
                    outcomes.insert((idx, batch, seq_len), Ok(timer.finish()));
                } else {
                    pending.push((idx, timer));
                }
            }
            timers = pending;
        }
    }

    struct Raw {
        variant: String,
        config_idx: usize,
        m: Throughput,
    }
    let mut raw = Vec::new();
    let mut failures = Vec::new();
    for (idx, spec) in specs.iter().enumerate() {
        let variant = spec.config.variant_name();
        for &batch in &spec.batches {
            for &seq_len in &spec.seq_lens {
                match outcomes.remove(&(idx, batch, seq_len)) {
                    Some(Ok(m)) => raw.push(Raw { variant: variant.clone(), config_idx: idx, m }),
                    Some(Err(reason)) => failures.push(RowFailure { variant: variant.clone(), batch, seq_len, reason }),
                    // Repeated grid entries were measured once.
                    None => {}
                }
            }
        }
    }

    let mut rows = Vec::new();
    for r in &raw {
        let base = raw.iter().find(|b| {
            b.config_idx == base_idx
                && b.m.batch == r.m.batch
                && b.m.seq_len == r.m.seq_len
                && b.m.threads == r.m.threads
        });
        let Some(base) = base else {
            failures.push(RowFailure {
                variant: r.variant.clone(),
                batch: r.m.batch,
                seq_len: r.m.seq_len,
                reason: "no baseline measurement for this shape".into(),
            });
            continue;
        };
        rows.push(BenchRow {
            variant: r.variant.clone(),
            batch: r.m.batch,
            seq_len: r.m.seq_len,
            threads: r.m.threads,
            tokens_per_sec_median: r.m.median,
            tokens_per_sec_min: r.m.min,
            tokens_per_sec_max: r.m.max,
            flops_forward: r.m.flops_forward,
            speedup_vs_baseline: r.m.median / base.m.median,
            flop_ratio_vs_baseline: analytic_flops(base_config, r.m.batch, r.m.seq_len) as f64
                / r.m.flops_forward as f64,
        });
    }
    Ok(BenchReport { rows, failures })
}

impl BenchReport {
    /// CSV rows followed by one `# failed,...` comment per failure.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(BENCH_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:?},{:?},{:?},{},{:?},{:?}\n",
                r.variant,
                r.batch,
                r.seq_len,
                r.threads,
                r.tokens_per_sec_median,
                r.tokens_per_sec_min,
                r.tokens_per_sec_max,
                r.flops_forward,
                r.speedup_vs_baseline,
                r.flop_ratio_vs_baseline
            ));
        }
        for f in &self.failures {
            let reason = f.reason.replace('\n', " ");
            out.push_str(&format!("# failed,{},{},{},{reason}\n", f.variant, f.batch, f.seq_len));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(BENCH_HEADER) {
            return Err(Error::Input("bench CSV does not start with the expected header".into()));
        }
        let int = |s: &str| -> Result<usize> { s.parse().map_err(|_| Error::Input(format!("bad integer `{s}`"))) };
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Input(format!("bad number `{s}`"))) };
        let mut report = BenchReport::default();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            if let Some(rest) = line.strip_prefix("# failed,") {
                let f: Vec<&str> = rest.splitn(4, ',').collect();
                if f.len() != 4 {
                    return Err(Error::Input(format!("malformed failure line `{line}`")));
                }
                report.failures.push(RowFailure {
                    variant: f[0].to_string(),
                    batch: int(f[1])?,
                    seq_len: int(f[2])?,
                    reason: f[3].to_string(),
                });
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 10 {
                return Err(Error::Input(format!("bench row `{line}` has {} fields", f.len())));
            }
            report.rows.push(BenchRow {
                variant: f[0].to_string(),
                batch: int(f[1])?,
                seq_len: int(f[2])?,
                threads: int(f[3])?,
                tokens_per_sec_median: num(f[4])?,
                tokens_per_sec_min: num(f[5])?,
                tokens_per_sec_max: num(f[6])?,
                flops_forward: f[7].parse().map_err(|_| Error::Input(format!("bad integer `{}`", f[7])))?,
                speedup_vs_baseline: num(f[8])?,
                flop_ratio_vs_baseline: num(f[9])?,
            });
        }
        Ok(report)
    }

    /// Plot data: for each variant (and batch and thread count) a `#` label
    /// line and `seq_len speedup` pairs, blocks separated by blank lines.
    pub fn to_plot_data(&self) -> String {
        let mut keys: Vec<(&str, usize, usize)> = Vec::new();
        for r in &self.rows {
            let k = (r.variant.as_str(), r.batch, r.threads);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let blocks: Vec<String> = keys
            .iter()
            .map(|&(variant, batch, threads)| {
                let mut pts: Vec<&BenchRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.variant == variant && r.batch == batch && r.threads == threads)
                    .collect();
                pts.sort_by_key(|r| r.seq_len);
                let mut block = format!("# {variant} batch={batch} threads={threads}\n");
                for r in pts {
                    block.push_str(&format!("{} {:.6}\n", r.seq_len, r.speedup_vs_baseline));
                }
                block
            })
            .collect();
        blocks.join("\n")
    }
}
