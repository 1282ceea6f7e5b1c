//! Closed-form forward-pass FLOP model.
//!
//! Convention: a multiply-add is 2 FLOPs; elementwise adds, scales and
//! residuals are 1 per element; GELU costs [`GELU_FLOPS`], softmax
//! [`SOFTMAX_FLOPS`], row standardization [`NORMALIZE_FLOPS`] and layernorm
//! [`LAYERNORM_FLOPS`] per element. Lookups, reshapes and eval-mode dropout
//! are free. The same constants drive the per-op counter on [`Tape`], so the
//! formula and an instrumented forward pass agree exactly.
//!
//! [`Tape`]: crate::tape::Tape

use crate::config::{AttentionKind, AttnLayerNorm, EncoderConfig, MlpLayerNorm};
use crate::error::{Error, Result};
use crate::model::intermediate_positions;
use crate::ops::{GELU_FLOPS, LAYERNORM_FLOPS, NORMALIZE_FLOPS, SOFTMAX_FLOPS};

/// Forward FLOPs split by component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlopBreakdown {
    /// Embedding sums and the embedding layernorm.
    pub embeddings: u64,
    /// Query, key, value and output projections with their biases.
    pub attention_projections: u64,
    /// `Q K^T`, its scaling and the value mix; grows with S².
    pub attention_products: u64,
    /// Softmax or standardization of the scores; grows with S².
    pub score_function: u64,
    /// Feed-forward units: both projections, biases and GELU.
    pub intermediate: u64,
    /// Residual additions and post-unit layernorms.
    pub residual_and_norms: u64,
    pub pooler: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.embeddings
            + self.attention_projections
            + self.attention_products
            + self.score_function
            + self.intermediate
            + self.residual_and_norms
            + self.pooler
    }
}

/// Component-wise forward FLOPs for a `[batch, seq_len]` input.
pub fn flop_breakdown(config: &EncoderConfig, batch: usize, seq_len: usize) -> FlopBreakdown {
    let (b, s) = (batch as u64, seq_len as u64);
    let h = config.hidden_size as u64;
    let a = config.num_heads as u64;
    let i = config.intermediate_size as u64;
    let m = config.num_attention_blocks as u64;
    let n_mlp = intermediate_positions(config.num_attention_blocks, config.period).len() as u64;
    let tokens = b * s;
    let scores = b * a * s * s;

    let score_cost = match config.attention_kind {
        AttentionKind::Softmax => SOFTMAX_FLOPS,
        AttentionKind::NormalizedBandd => NORMALIZE_FLOPS,
    };
    let attn_ln = match config.attn_layernorm {
        AttnLayerNorm::Keep => LAYERNORM_FLOPS,
        AttnLayerNorm::RemoveAblation => 0,
    };
    let mlp_ln = match config.mlp_layernorm {
        MlpLayerNorm::Keep => LAYERNORM_FLOPS,
        MlpLayerNorm::Remove => 0,
    };

    FlopBreakdown {
        embeddings: tokens * h * (2 + LAYERNORM_FLOPS),
        attention_projections: m * 4 * (2 * tokens * h * h + tokens * h),
        attention_products: m * (2 * b * s * s * h + scores + 2 * b * s * s * h),
        score_function: m * score_cost * scores,
        intermediate: n_mlp * (4 * tokens * h * i + tokens * i * (1 + GELU_FLOPS) + tokens * h),
        residual_and_norms: m * tokens * h * (1 + attn_ln) + n_mlp * tokens * h * (1 + mlp_ln),
        pooler: if config.include_pooler { 2 * b * h * h + 2 * b * h } else { 0 },
    }
}

/// Exact forward-pass FLOP count; see the module docs for the convention.
pub fn analytic_flops(config: &EncoderConfig, batch: usize, seq_len: usize) -> u64 {
    flop_breakdown(config, batch, seq_len).total()
}

/// `flops(baseline) / flops(variant)` at the same shape; above 1 means the
/// variant is cheaper.
pub fn flop_ratio(baseline: &EncoderConfig, variant: &EncoderConfig, batch: usize, seq_len: usize) -> Result<f64> {
    let v = analytic_flops(variant, batch, seq_len);
    if v == 0 {
        return Err(Error::Contract("variant has zero FLOPs".into()));
    }
    Ok(analytic_flops(baseline, batch, seq_len) as f64 / v as f64)
}
