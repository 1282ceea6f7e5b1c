use crate::config::{AttnLayerNorm, EncoderConfig, IntermediatePeriod, MlpLayerNorm};
use crate::error::{Error, Result};

/// 1-based indices of the attention units that are followed by an
/// intermediate unit: `n, 2n, ..., floor(m/n)*n`, or none at all.
pub fn intermediate_positions(m: usize, period: IntermediatePeriod) -> Vec<usize> {
    match period {
        IntermediatePeriod::Every(n) if n > 0 => (1..=m / n).map(|i| i * n).collect(),
        _ => Vec::new(),
    }
}

/// Exact parameter count with a per-component breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamCount {
    /// Token, position and type tables.
    pub embeddings: u64,
    /// Q/K/V/O projections and, for normalized attention, the per-head
    /// score gain and bias.
    pub attention: u64,
    /// Up and down projections of every intermediate unit.
    pub intermediate: u64,
    /// Gain and bias of every layernorm, including the embedding one.
    pub layernorms: u64,
    pub pooler: u64,
    pub total: u64,
}

/// Closed-form parameter count of the stack `build_stack(config, _)` would build.
pub fn count_parameters(config: &EncoderConfig) -> ParamCount {
    let h = config.hidden_size as u64;
    let i = config.intermediate_size as u64;
    let m = config.num_attention_blocks as u64;
    let k = intermediate_positions(config.num_attention_blocks, config.period).len() as u64;

    let embeddings = (config.vocab_size + config.max_position + config.type_vocab) as u64 * h;
    let score_norm = if config.is_bandd() { 2 * config.num_heads as u64 } else { 0 };
    let attention = m * (4 * (h * h + h) + score_norm);
    let intermediate = k * (h * i + i + i * h + h);
    let mut layernorms = 2 * h;
    if config.attn_layernorm == AttnLayerNorm::Keep {
        layernorms += m * 2 * h;
    }
    if config.mlp_layernorm == MlpLayerNorm::Keep {
        layernorms += k * 2 * h;
    }
    let pooler = if config.include_pooler { h * h + h } else { 0 };
    ParamCount {
        embeddings,
        attention,
        intermediate,
        layernorms,
        pooler,
        total: embeddings + attention + intermediate + layernorms + pooler,
    }
}

/// `base.total / variant.total`.
pub fn size_ratio(base: &ParamCount, variant: &ParamCount) -> Result<f64> {
    if variant.total == 0 {
        return Err(Error::Contract("size_ratio: variant has zero parameters".into()));
    }
    Ok(base.total as f64 / variant.total as f64)
}
