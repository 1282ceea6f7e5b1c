//! Wall-clock inference throughput of an encoder stack.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::{EncoderStack, TokenBatch};
use crate::tape::Tape;

use super::flops::analytic_flops;

/// One variant's measurement grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub config: EncoderConfig,
    pub batches: Vec<usize>,
    pub seq_lens: Vec<usize>,
    pub warmup: usize,
    pub iterations: usize,
    /// Workers running forward passes concurrently, each on its own input.
    pub threads: usize,
    pub seed: u64,
    /// Iterations shorter than this are rejected as unmeasurable.
    pub min_iteration_time: Duration,
}

impl BenchSpec {
    pub fn new(config: EncoderConfig, batches: Vec<usize>, seq_lens: Vec<usize>) -> Self {
        Self {
            config,
            batches,
            seq_lens,
            warmup: 1,
            iterations: 5,
            threads: 1,
            seed: 0,
            min_iteration_time: Duration::from_micros(50),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 3 {
            return Err(Error::config("iterations", "at least 3 measured iterations are needed for a median"));
        }
        if self.warmup < 1 {
            return Err(Error::config("warmup", "at least one warmup iteration is required"));
        }
        if self.threads == 0 {
            return Err(Error::config("threads", "must be positive"));
        }
        if self.batches.is_empty() || self.batches.contains(&0) {
            return Err(Error::config("batch", "batch sizes must be positive"));
        }
        self.validate_seq_lens()
    }

    fn validate_seq_lens(&self) -> Result<()> {
        match self.seq_lens.iter().find(|&&s| s == 0 || s > self.config.max_position) {
            Some(s) => Err(Error::config("seq_len", format!("{s} is outside 1..={}", self.config.max_position))),
            None if self.seq_lens.is_empty() => Err(Error::config("seq_len", "no sequence lengths given")),
            None => Ok(()),
        }
    }
}

/// Tokens per second over the measured iterations of one shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Throughput {
    pub batch: usize,
    pub seq_len: usize,
    pub threads: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub flops_forward: u64,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Fixed pseudo-random token batch drawn from `seed`.
pub fn random_batch(config: &EncoderConfig, batch: usize, seq_len: usize, seed: u64) -> Result<TokenBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = (0..batch * seq_len).map(|_| rng.gen_range(0..config.vocab_size)).collect();
    TokenBatch::unmasked(ids, batch, seq_len)
}

fn run_forward(stack: &EncoderStack, batch: &TokenBatch) -> Result<()> {
    let tape = Tape::no_grad();
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let hidden = stack.forward(&tape, batch, false, &mut rng)?;
    stack.pool(&tape, &hidden).map(drop)
}

/// Timing state for one variant at one shape. Iterations can be taken one at
/// a time, which lets a sweep interleave variants.
pub(crate) struct ShapeTimer<'a> {
    stack: &'a EncoderStack,
    spec: &'a BenchSpec,
    inputs: Vec<TokenBatch>,
    batch: usize,
    seq_len: usize,
    rates: Vec<f64>,
}

impl<'a> ShapeTimer<'a> {
    pub(crate) fn new(stack: &'a EncoderStack, spec: &'a BenchSpec, batch: usize, seq_len: usize) -> Result<Self> {
        let inputs = (0..spec.threads)
            .map(|t| random_batch(stack.config(), batch, seq_len, spec.seed.wrapping_add(t as u64)))
            .collect::<Result<_>>()?;
        Ok(Self { stack, spec, inputs, batch, seq_len, rates: Vec::with_capacity(spec.iterations) })
    }

    fn iteration(&self) -> Result<Duration> {
        let start = Instant::now();
        if self.spec.threads == 1 {
            run_forward(self.stack, &self.inputs[0])?;
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> =
                    self.inputs.iter().map(|input| scope.spawn(move || run_forward(self.stack, input))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(Error::Measurement("worker thread panicked".into()))))
                    .collect::<Result<Vec<()>>>()
            })?;
        }
        Ok(start.elapsed())
    }

    pub(crate) fn warm_up(&self) -> Result<()> {
        for _ in 0..self.spec.warmup {
            self.iteration()?;
        }
        Ok(())
    }

    pub(crate) fn done(&self) -> bool {
        self.rates.len() >= self.spec.iterations
    }

    /// Takes one timed iteration.
    pub(crate) fn sample(&mut self) -> Result<()> {
        let elapsed = self.iteration()?;
        if elapsed < self.spec.min_iteration_time {
            return Err(Error::Measurement(format!(
                "an iteration took {elapsed:?}, below the {:?} the timer can resolve reliably; raise the batch size or sequence length",
                self.spec.min_iteration_time
            )));
        }
        let tokens = (self.spec.threads * self.batch * self.seq_len) as f64;
        self.rates.push(tokens / elapsed.as_secs_f64());
        Ok(())
    }

    pub(crate) fn finish(mut self) -> Throughput {
        self.rates.sort_by(f64::total_cmp);
        Throughput {
            batch: self.batch,
            seq_len: self.seq_len,
            threads: self.spec.threads,
            median: median(&self.rates),
            min: self.rates[0],
            max: self.rates[self.rates.len() - 1],
            flops_forward: analytic_flops(self.stack.config(), self.batch, self.seq_len),
        }
    }
}

/// Times one shape: `warmup` discarded iterations, then `iterations` timed
/// ones. Each iteration runs one forward pass per worker thread.
pub fn measure_shape(stack: &EncoderStack, spec: &BenchSpec, batch: usize, seq_len: usize) -> Result<Throughput> {
    let mut timer = ShapeTimer::new(stack, spec, batch, seq_len)?;
    timer.warm_up()?;
    while !timer.done() {
        timer.sample()?;
    }
    Ok(timer.finish())
}

/// Measures every `(batch, seq_len)` pair of `spec` on `stack`.
pub fn measure_throughput(stack: &EncoderStack, spec: &BenchSpec) -> Result<Vec<Throughput>> {
    spec.validate()?;
    if stack.config() != &spec.config {
        return Err(Error::Contract("stack was not built from the spec's config".into()));
    }
    let mut out = Vec::new();
    for &b in &spec.batches {
        for &s in &spec.seq_lens {
            out.push(measure_shape(stack, spec, b, s)?);
        }
    }
    Ok(out)
}
