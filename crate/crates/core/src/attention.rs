//! Multi-head self-attention with interchangeable score functions.
//!
//! The unit is split into the same four stages for both variants:
//! logits from the query/key projections, a score function (softmax or
//! per-head standardization), value mixing, and the output projection.
//! Only the score stage differs between [`AttentionKind`]s.

use rand::RngCore;

use crate::config::AttentionKind;
use crate::error::{Error, Result};
use crate::ops::KeyMask;
use crate::tape::{Tape, Var};

/// A dense layer bound to a tape: `x W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl BoundLinear {
    pub fn apply(&self, tape: &Tape, x: &Var) -> Result<Var> {
        let y = tape.matmul(x, &self.weight)?;
        tape.add_bias(&y, &self.bias)
    }
}

/// Projection weights of one attention unit, plus the per-head score gain
/// and bias used by the normalized variant.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub query: BoundLinear,
    pub key: BoundLinear,
    pub value: BoundLinear,
    pub output: BoundLinear,
    pub score_gain: Option<Var>,
    pub score_bias: Option<Var>,
}

/// Static settings of an attention unit.
#[derive(Debug, Clone, Copy)]
pub struct AttentionSpec {
    pub heads: usize,
    pub kind: AttentionKind,
    pub eps: f64,
    pub output_dropout: f64,
}

/// Per-head `Q K^T / sqrt(d)` as `[B, A, S, S]`.
pub fn attention_logits(tape: &Tape, x: &Var, w: &AttentionWeights, heads: usize) -> Result<Var> {
    let hidden = *x.shape().last().unwrap_or(&0);
    if heads == 0 || !hidden.is_multiple_of(heads) {
        return Err(Error::dim(format!("{heads} heads do not divide hidden size {hidden}")));
    }
    let q = w.query.apply(tape, x)?;
    let k = w.key.apply(tape, x)?;
    let d = hidden / heads;
    tape.attention_logits(&q, &k, heads, 1.0 / (d as f64).sqrt())
}

/// Softmax over unmasked keys; masked keys score exactly zero.
pub fn scores_softmax(tape: &Tape, logits: &Var, mask: &KeyMask) -> Result<Var> {
    tape.softmax_rows(logits, Some(mask))
}

/// Standardization over unmasked keys with per-head `gain` and `bias`
/// (`[A]` each); masked keys score exactly zero.
pub fn scores_normalized(tape: &Tape, logits: &Var, mask: &KeyMask, gain: &Var, bias: &Var, eps: f64) -> Result<Var> {
    tape.normalize_rows(logits, gain, bias, eps, Some(mask))
}

/// Applies the score function selected by `spec.kind`.
pub fn scores(tape: &Tape, logits: &Var, mask: &KeyMask, w: &AttentionWeights, spec: &AttentionSpec) -> Result<Var> {
    match spec.kind {
        AttentionKind::Softmax => scores_softmax(tape, logits, mask),
        AttentionKind::NormalizedBandd => {
            let (Some(g), Some(b)) = (&w.score_gain, &w.score_bias) else {
                return Err(Error::Contract("normalized attention needs score gain and bias".into()));
            };
            scores_normalized(tape, logits, mask, g, b, spec.eps)
        }
    }
}

/// Mixes values with `scores`, concatenates heads and applies the output
/// projection. The softmax variant then applies dropout in training; the
/// normalized variant never does.
pub fn attention_output(
    tape: &Tape,
    scores: &Var,
    x: &Var,
    w: &AttentionWeights,
    spec: &AttentionSpec,
    training: bool,
    rng: &mut dyn RngCore,
) -> Result<Var> {
    let v = w.value.apply(tape, x)?;
    let ctx = tape.attention_mix(scores, &v, spec.heads)?;
    let out = w.output.apply(tape, &ctx)?;
    match spec.kind {
        AttentionKind::Softmax => tape.dropout(&out, spec.output_dropout, training, rng),
        AttentionKind::NormalizedBandd => Ok(out),
    }
}

/// Full unit without the residual: logits, scores, output.
pub fn self_attention(
    tape: &Tape,
    x: &Var,
    mask: &KeyMask,
    w: &AttentionWeights,
    spec: &AttentionSpec,
    training: bool,
    rng: &mut dyn RngCore,
) -> Result<Var> {
    let logits = attention_logits(tape, x, w, spec.heads)?;
    let s = scores(tape, &logits, mask, w, spec)?;
    attention_output(tape, &s, x, w, spec, training, rng)
}
