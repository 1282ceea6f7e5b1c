//! Sequence-classification fine-tuning from a pre-training checkpoint.

use std::time::Instant;

use rand::{Rng, RngCore};

use crate::config::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, EncoderStack, Linear, TokenBatch};
use crate::params::{ParamRole, ParamStore};
use crate::tape::{Tape, Var};

use super::config::TrainConfig;
use super::data::{ClassificationTask, LabeledSplit};
use super::divergence::{detect_divergence, DivergenceThresholds, Health};
use super::mlm::{adam_settings, stream, STREAM_BATCHES, STREAM_DROPOUT, STREAM_HEAD};
use super::optim::Adam;
use super::runlog::{RunLog, RunStatus, StepRecord};

pub const CLASSIFIER_GROUP: u16 = 2;

/// Linear classifier over the pooled first-position state.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub params: ParamStore,
    pub proj: Linear,
}

impl ClassifierHead {
    pub fn new(hidden: usize, classes: usize, rng: &mut impl Rng) -> Self {
        let mut params = ParamStore::new(CLASSIFIER_GROUP);
        let proj = Linear {
            weight: params.add("classifier.weight", &[hidden, classes], ParamRole::Weight, rng),
            bias: params.add("classifier.bias", &[classes], ParamRole::Bias, rng),
        };
        Self { params, proj }
    }

    pub fn logits(
        &self,
        tape: &Tape,
        stack: &EncoderStack,
        batch: &TokenBatch,
        training: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        let hidden = stack.forward(tape, batch, training, rng)?;
        let pooled = stack.pool(tape, &hidden)?;
        self.proj.bind(&self.params, tape).apply(tape, &pooled)
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneReport {
    pub log: RunLog,
    /// Eval accuracy of the loaded encoder with the fresh head.
    pub initial_accuracy: f64,
    pub final_accuracy: f64,
    pub stack: EncoderStack,
    pub head: ClassifierHead,
}

fn batch_of(split: &LabeledSplit, rows: &[usize], seq_len: usize) -> Result<(TokenBatch, Vec<usize>)> {
    let ids = rows.iter().flat_map(|&r| split.sequences[r].iter().copied()).collect();
    let labels = rows.iter().map(|&r| split.labels[r]).collect();
    Ok((TokenBatch::unmasked(ids, rows.len(), seq_len)?, labels))
}

/// Fraction of `split` classified correctly, dropout off.
pub fn classification_accuracy(
    stack: &EncoderStack,
    head: &ClassifierHead,
    split: &LabeledSplit,
    batch_size: usize,
) -> Result<f64> {
    let seq_len = split.sequences.first().map_or(0, Vec::len);
    let mut correct = 0usize;
    let mut no_dropout = rand::rngs::mock::StepRng::new(0, 0);
    let all: Vec<usize> = (0..split.sequences.len()).collect();
    for rows in all.chunks(batch_size.max(1)) {
        let (batch, labels) = batch_of(split, rows, seq_len)?;
        let tape = Tape::no_grad();
        let logits = head.logits(&tape, stack, &batch, false, &mut no_dropout)?;
        let classes = logits.shape()[1];
        for (row, &label) in logits.data().chunks_exact(classes).zip(&labels) {
            let best = (0..classes).max_by(|&a, &b| row[a].total_cmp(&row[b])).expect("at least one class");
            correct += usize::from(best == label);
        }
    }
    Ok(correct as f64 / split.sequences.len() as f64)
}

/// Loads the encoder from `checkpoint`, attaches a two-way classifier and
/// trains every weight on `task`.
pub fn finetune_classifier(
    checkpoint: &[u8],
    encoder: &EncoderConfig,
    task: &ClassificationTask,
    config: &TrainConfig,
) -> Result<FinetuneReport> {
    config.validate()?;
    let mut stack = load_checkpoint(checkpoint, encoder)?;
    if task.vocab_size != encoder.vocab_size || task.seq_len > encoder.max_position {
        return Err(Error::config("vocab_size", "classification task does not fit the encoder"));
    }
    let (train, eval) = task.generate()?;
    let mut batch_rng = stream(config.seed, STREAM_BATCHES);
    let mut dropout_rng = stream(config.seed, STREAM_DROPOUT);
    let mut head = ClassifierHead::new(encoder.hidden_size, 2, &mut stream(config.seed, STREAM_HEAD));
    let thresholds =
        DivergenceThresholds { grad_norm: config.grad_norm_threshold, consecutive: config.divergence_window };
    let mut adam = Adam::new(adam_settings(config), &[stack.params(), &head.params]);
    let initial_accuracy = classification_accuracy(&stack, &head, &eval, config.batch_size)?;
    let mut log = RunLog::new();
    let mut status = RunStatus::Completed;

    for step in 0..config.total_steps {
        let start = Instant::now();
        let lr = config.lr_at(step);
        let rows: Vec<usize> = (0..config.batch_size).map(|_| batch_rng.gen_range(0..train.sequences.len())).collect();
        let (batch, labels) = batch_of(&train, &rows, task.seq_len)?;
        let tape = Tape::new();
        let logits = head.logits(&tape, &stack, &batch, true, &mut dropout_rng)?;
        let loss = tape.cross_entropy_logits(&logits, &labels)?;
        let grads = tape.backward(&loss)?;
        log.push(StepRecord {
            step,
            lr,
            loss: loss.data()[0],
            l2_term: 0.0,
            grad_norm: grads.global_norm(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        let window = &log.records()[log.records().len().saturating_sub(config.divergence_window)..];
        if let Health::Diverged(reason) = detect_divergence(window, &thresholds) {
            status = RunStatus::Diverged { step, reason };
            break;
        }
        stack.params_mut().accumulate(&grads)?;
        head.params.accumulate(&grads)?;
        drop(tape);
        adam.step(lr, &mut [stack.params_mut(), &mut head.params]);
    }
    log.finish(status);
    let final_accuracy = classification_accuracy(&stack, &head, &eval, config.batch_size)?;
    Ok(FinetuneReport { log, initial_accuracy, final_accuracy, stack, head })
}
