//! Analytic FLOP counts and measured inference throughput across variants.

mod flops;
mod report;
mod throughput;

pub use flops::{analytic_flops, flop_breakdown, flop_ratio, FlopBreakdown};
pub use report::{is_baseline, sweep, BenchReport, BenchRow, RowFailure, BENCH_HEADER};
pub use throughput::{measure_shape, measure_throughput, random_batch, BenchSpec, Throughput};
