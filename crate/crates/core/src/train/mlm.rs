//! Masked-LM pre-training on a synthetic corpus.

use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{serialize_checkpoint, EncoderStack, Linear, TokenBatch};
use crate::params::{ParamRole, ParamStore};
use crate::tape::{Tape, Var};

use super::config::TrainConfig;
use super::data::{mask_sequence, Corpus, MaskedSequence, SyntheticTask};
use super::divergence::{detect_divergence, DivergenceThresholds, Health};
use super::optim::{Adam, AdamSettings};
use super::runlog::{RunLog, RunStatus, StepRecord};

pub const MLM_HEAD_GROUP: u16 = 1;

// Independent random streams derived from the run seed.
pub(crate) const STREAM_BATCHES: u64 = 1;
pub(crate) const STREAM_MASKS: u64 = 2;
pub(crate) const STREAM_DROPOUT: u64 = 3;
pub(crate) const STREAM_HEAD: u64 = 4;
pub(crate) const STREAM_EVAL: u64 = 5;

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// `task_loss + lambda * sum ||W||^2` over `weights`. Returns the total and
/// the penalty term. With `lambda == 0` the task loss is returned as is.
pub fn loss_with_l2(tape: &Tape, task_loss: &Var, weights: &[Var], lambda: f64) -> Result<(Var, Var)> {
    if !(lambda >= 0.0) {
        return Err(Error::Parameter(format!("l2_lambda must be non-negative, got {lambda}")));
    }
    if lambda == 0.0 || weights.is_empty() {
        let zero = tape.constant(&[], vec![0.0])?;
        return Ok((task_loss.clone(), zero));
    }
    let mut total = tape.sum_squares(&weights[0]);
    for w in &weights[1..] {
        total = tape.add(&total, &tape.sum_squares(w))?;
    }
    let term = tape.scale(&total, lambda);
    Ok((tape.add(task_loss, &term)?, term))
}

/// Binds the weight matrices and embedding tables of `store`, the tensors
/// the L2 penalty applies to.
pub fn penalized_weights(store: &ParamStore, tape: &Tape) -> Vec<Var> {
    (0..store.len())
        .map(crate::params::ParamId)
        .filter(|&id| store.entries()[id.0].role.is_matrix())
        .map(|id| store.bind(tape, id))
        .collect()
}

/// Output projection from hidden states to vocabulary logits.
#[derive(Debug, Clone)]
pub struct MlmHead {
    pub params: ParamStore,
    pub proj: Linear,
}

impl MlmHead {
    pub fn new(hidden: usize, vocab: usize, rng: &mut impl Rng) -> Self {
        let mut params = ParamStore::new(MLM_HEAD_GROUP);
        let proj = Linear {
            weight: params.add("mlm.weight", &[hidden, vocab], ParamRole::Weight, rng),
            bias: params.add("mlm.bias", &[vocab], ParamRole::Bias, rng),
        };
        Self { params, proj }
    }

    /// Logits `[N, V]` for the rows of `hidden [B, S, H]` at flat `positions`.
    pub fn logits(&self, tape: &Tape, hidden: &Var, positions: &[usize]) -> Result<Var> {
        let s = hidden.shape();
        let flat = tape.reshape(hidden, &[s[0] * s[1], s[2]])?;
        let rows = tape.gather_rows(&flat, positions)?;
        self.proj.bind(&self.params, tape).apply(tape, &rows)
    }
}

impl SyntheticTask {
    /// Corpus matching a run's sequence length and task settings.
    pub fn for_run(config: &TrainConfig, vocab_size: usize) -> Self {
        Self {
            kind: config.task,
            vocab_size,
            seq_len: config.seq_len,
            branching: config.branching,
            transition_seed: config.seed,
            train_size: config.train_sequences,
            eval_size: config.eval_sequences,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub log: RunLog,
    pub checkpoint: Vec<u8>,
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
    pub head: MlmHead,
}

/// Whether the L2 penalty applies to this stack under `config`.
pub fn l2_applies(stack: &EncoderStack, config: &TrainConfig) -> bool {
    stack.config().is_bandd() || config.l2_all_variants
}

fn masked_batch(examples: &[&MaskedSequence], seq_len: usize) -> Result<(TokenBatch, Vec<usize>, Vec<usize>)> {
    let mut ids = Vec::with_capacity(examples.len() * seq_len);
    let mut positions = Vec::new();
    let mut targets = Vec::new();
    for (b, ex) in examples.iter().enumerate() {
        ids.extend_from_slice(&ex.input);
        positions.extend(ex.positions.iter().map(|p| b * seq_len + p));
        targets.extend_from_slice(&ex.targets);
    }
    Ok((TokenBatch::unmasked(ids, examples.len(), seq_len)?, positions, targets))
}

/// Mean masked-token cross-entropy over a fixed set of masked sequences,
/// with dropout off.
pub fn mlm_eval_loss(
    stack: &EncoderStack,
    head: &MlmHead,
    examples: &[MaskedSequence],
    batch_size: usize,
) -> Result<f64> {
    let seq_len = examples.first().map_or(0, |e| e.input.len());
    let mut total = 0.0;
    let mut count = 0usize;
    let mut no_dropout = rand::rngs::mock::StepRng::new(0, 0);
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&MaskedSequence> = chunk.iter().collect();
        let (batch, positions, targets) = masked_batch(&refs, seq_len)?;
        let tape = Tape::no_grad();
        let hidden = stack.forward(&tape, &batch, false, &mut no_dropout)?;
        let logits = head.logits(&tape, &hidden, &positions)?;
        let loss = tape.cross_entropy_logits(&logits, &targets)?;
        total += loss.data()[0] * targets.len() as f64;
        count += targets.len();
    }
    Ok(total / count as f64)
}

fn check_l2_policy(stack: &EncoderStack, config: &TrainConfig) -> Result<()> {
    if stack.config().is_bandd() && config.require_l2_for_bandd && config.l2_lambda == 0.0 {
        return Err(Error::config(
            "l2_lambda",
            "normalized attention is trained with an L2 penalty; set l2_lambda > 0 or require_l2_for_bandd = false",
        ));
    }
    Ok(())
}

/// Trains `stack` in place with masked-token prediction and returns the
/// step log, a checkpoint of the final encoder and eval losses before and
/// after training. Divergence ends the run with a status, not an error.
pub fn pretrain_mlm(stack: &mut EncoderStack, task: &SyntheticTask, config: &TrainConfig) -> Result<PretrainOutcome> {
    config.validate()?;
    check_l2_policy(stack, config)?;
    let enc = stack.config().clone();
    if task.vocab_size != enc.vocab_size {
        return Err(Error::config("vocab_size", "task and encoder vocabularies differ"));
    }
    if task.seq_len != config.seq_len || task.seq_len > enc.max_position {
        return Err(Error::config("seq_len", "task length must equal seq_len and fit max_position"));
    }
    let Corpus { train, eval } = task.generate()?;

    let mut batch_rng = stream(config.seed, STREAM_BATCHES);
    let mut mask_rng = stream(config.seed, STREAM_MASKS);
    let mut dropout_rng = stream(config.seed, STREAM_DROPOUT);
    let mut head = MlmHead::new(enc.hidden_size, enc.vocab_size, &mut stream(config.seed, STREAM_HEAD));
    let mut eval_rng = stream(config.seed, STREAM_EVAL);
    let eval_set: Vec<MaskedSequence> =
        eval.iter().map(|s| mask_sequence(s, config.mask_fraction, enc.vocab_size, &mut eval_rng)).collect();

    let lambda = if l2_applies(stack, config) { config.l2_lambda } else { 0.0 };
    let thresholds =
        DivergenceThresholds { grad_norm: config.grad_norm_threshold, consecutive: config.divergence_window };
    let mut adam = Adam::new(adam_settings(config), &[stack.params(), &head.params]);
    let initial_eval_loss = mlm_eval_loss(stack, &head, &eval_set, config.batch_size)?;
    let mut log = RunLog::new();
    let mut status = RunStatus::Completed;

    for step in 0..config.total_steps {
        let start = Instant::now();
        let lr = config.lr_at(step);
        let examples: Vec<MaskedSequence> = (0..config.batch_size)
            .map(|_| {
                let seq = &train[batch_rng.gen_range(0..train.len())];
                mask_sequence(seq, config.mask_fraction, enc.vocab_size, &mut mask_rng)
            })
            .collect();
        let refs: Vec<&MaskedSequence> = examples.iter().collect();
        let (batch, positions, targets) = masked_batch(&refs, config.seq_len)?;

        let tape = Tape::new();
        let hidden = stack.forward(&tape, &batch, true, &mut dropout_rng as &mut dyn RngCore)?;
        let logits = head.logits(&tape, &hidden, &positions)?;
        let task_loss = tape.cross_entropy_logits(&logits, &targets)?;
        let (loss, l2) = loss_with_l2(&tape, &task_loss, &penalized_weights(stack.params(), &tape), lambda)?;
        let grads = tape.backward(&loss)?;
        let record = StepRecord {
            step,
            lr,
            loss: loss.data()[0],
            l2_term: l2.data()[0],
            grad_norm: grads.global_norm(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        log.push(record);
        let window = &log.records()[log.records().len().saturating_sub(config.divergence_window)..];
        if let Health::Diverged(reason) = detect_divergence(window, &thresholds) {
            status = RunStatus::Diverged { step, reason };
            break;
        }
        stack.params_mut().accumulate(&grads)?;
        head.params.accumulate(&grads)?;
        drop(tape);
        adam.step(lr, &mut [stack.params_mut(), &mut head.params]);

        if let (Some(target), true) = (config.target_eval_loss, config.eval_every > 0) {
            if (step + 1) % config.eval_every == 0
                && mlm_eval_loss(stack, &head, &eval_set, config.batch_size)? <= target
            {
                status = RunStatus::Converged;
                break;
            }
        }
    }
    log.finish(status);
    let final_eval_loss =
        if status.is_diverged() { f64::NAN } else { mlm_eval_loss(stack, &head, &eval_set, config.batch_size)? };
    Ok(PretrainOutcome { log, checkpoint: serialize_checkpoint(stack), initial_eval_loss, final_eval_loss, head })
}

pub(crate) fn adam_settings(config: &TrainConfig) -> AdamSettings {
    AdamSettings { beta1: config.beta1, beta2: config.beta2, eps: config.adam_eps }
}
