//! Encoder stacks: construction, forward pass, parameter counting and
//! checkpoints.

mod checkpoint;
mod count;

pub use checkpoint::{
    load_checkpoint, read_checkpoint_header, serialize_checkpoint, stored_config_record, CheckpointHeader,
    FORMAT_VERSION, MAGIC,
};
pub use count::{count_parameters, intermediate_positions, size_ratio, ParamCount};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{self_attention, AttentionSpec, AttentionWeights, BoundLinear};
use crate::config::{AttnLayerNorm, EncoderConfig, MlpLayerNorm};
use crate::error::{Error, Result};
use crate::ops::KeyMask;
use crate::params::{ParamId, ParamRole, ParamStore};
use crate::tape::{Tape, Var};

/// Store group used by encoder parameters.
pub const ENCODER_GROUP: u16 = 0;

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    fn build<R: RngCore>(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let weight = store.add(format!("{name}.weight"), &[inputs, outputs], ParamRole::Weight, rng);
        let bias = store.add(format!("{name}.bias"), &[outputs], ParamRole::Bias, rng);
        Self { weight, bias }
    }

    pub fn bind(&self, store: &ParamStore, tape: &Tape) -> BoundLinear {
        BoundLinear { weight: store.bind(tape, self.weight), bias: store.bind(tape, self.bias) }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    fn build<R: RngCore>(store: &mut ParamStore, name: &str, width: usize, rng: &mut R) -> Self {
        let gain = store.add(format!("{name}.gain"), &[width], ParamRole::Gain, rng);
        let bias = store.add(format!("{name}.bias"), &[width], ParamRole::Shift, rng);
        Self { gain, bias }
    }

    fn apply(&self, store: &ParamStore, tape: &Tape, x: &Var, eps: f64) -> Result<Var> {
        tape.layer_norm(x, &store.bind(tape, self.gain), &store.bind(tape, self.bias), eps)
    }
}

#[derive(Debug, Clone)]
pub struct AttentionUnit {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    /// Per-head score gain/bias, normalized attention only.
    pub score_norm: Option<Norm>,
    /// Post-residual layernorm; absent under the ablation.
    pub layernorm: Option<Norm>,
}

impl AttentionUnit {
    pub fn bind(&self, store: &ParamStore, tape: &Tape) -> AttentionWeights {
        AttentionWeights {
            query: self.query.bind(store, tape),
            key: self.key.bind(store, tape),
            value: self.value.bind(store, tape),
            output: self.output.bind(store, tape),
            score_gain: self.score_norm.map(|n| store.bind(tape, n.gain)),
            score_bias: self.score_norm.map(|n| store.bind(tape, n.bias)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IntermediateUnit {
    pub up: Linear,
    pub down: Linear,
    /// Post-residual layernorm; absent under NoMLPLN.
    pub layernorm: Option<Norm>,
}

/// One attention unit, optionally followed by an intermediate unit.
#[derive(Debug, Clone)]
pub struct Block {
    pub attention: AttentionUnit,
    pub intermediate: Option<IntermediateUnit>,
}

#[derive(Debug, Clone)]
pub struct Embeddings {
    pub token: ParamId,
    pub position: ParamId,
    pub token_type: ParamId,
    pub layernorm: Norm,
}

/// Token ids `[B, S]` (row-major) with the matching key mask.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    pub batch: usize,
    pub seq_len: usize,
    pub mask: KeyMask,
}

impl TokenBatch {
    pub fn new(ids: Vec<usize>, batch: usize, seq_len: usize, mask: KeyMask) -> Result<Self> {
        if ids.len() != batch * seq_len || batch == 0 || seq_len == 0 {
            return Err(Error::Input(format!("{} token ids cannot form a [{batch}, {seq_len}] batch", ids.len())));
        }
        if mask.batch() != batch || mask.keys() != seq_len {
            return Err(Error::Input(format!(
                "mask [{}, {}] does not match batch [{batch}, {seq_len}]",
                mask.batch(),
                mask.keys()
            )));
        }
        Ok(Self { ids, batch, seq_len, mask })
    }

    /// Batch with every position valid.
    pub fn unmasked(ids: Vec<usize>, batch: usize, seq_len: usize) -> Result<Self> {
        Self::new(ids, batch, seq_len, KeyMask::all(batch, seq_len))
    }
}

/// A built encoder: embeddings, blocks and optional pooler, with all
/// parameters in one ordered store.
#[derive(Debug, Clone)]
pub struct EncoderStack {
    config: EncoderConfig,
    seed: u64,
    params: ParamStore,
    embeddings: Embeddings,
    blocks: Vec<Block>,
    pooler: Option<Linear>,
}

/// Builds a stack with deterministic initialization from `seed`.
pub fn build_stack(config: &EncoderConfig, seed: u64) -> Result<EncoderStack> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new(ENCODER_GROUP);
    let c = config;
    let h = c.hidden_size;
    let embeddings = Embeddings {
        token: store.add("embeddings.token", &[c.vocab_size, h], ParamRole::Embedding, &mut rng),
        position: store.add("embeddings.position", &[c.max_position, h], ParamRole::Embedding, &mut rng),
        token_type: store.add("embeddings.token_type", &[c.type_vocab, h], ParamRole::Embedding, &mut rng),
        layernorm: Norm::build(&mut store, "embeddings.layernorm", h, &mut rng),
    };
    let positions = intermediate_positions(c.num_attention_blocks, c.period);
    let mut blocks = Vec::with_capacity(c.num_attention_blocks);
    for i in 1..=c.num_attention_blocks {
        let p = format!("blocks.{i}.attention");
        let attention = AttentionUnit {
            query: Linear::build(&mut store, &format!("{p}.query"), h, h, &mut rng),
            key: Linear::build(&mut store, &format!("{p}.key"), h, h, &mut rng),
            value: Linear::build(&mut store, &format!("{p}.value"), h, h, &mut rng),
            output: Linear::build(&mut store, &format!("{p}.output"), h, h, &mut rng),
            score_norm: c
                .is_bandd()
                .then(|| Norm::build(&mut store, &format!("{p}.score_norm"), c.num_heads, &mut rng)),
            layernorm: (c.attn_layernorm == AttnLayerNorm::Keep)
                .then(|| Norm::build(&mut store, &format!("{p}.layernorm"), h, &mut rng)),
        };
        let intermediate = positions.contains(&i).then(|| {
            let p = format!("blocks.{i}.intermediate");
            IntermediateUnit {
                up: Linear::build(&mut store, &format!("{p}.up"), h, c.intermediate_size, &mut rng),
                down: Linear::build(&mut store, &format!("{p}.down"), c.intermediate_size, h, &mut rng),
                layernorm: (c.mlp_layernorm == MlpLayerNorm::Keep)
                    .then(|| Norm::build(&mut store, &format!("{p}.layernorm"), h, &mut rng)),
            }
        });
        blocks.push(Block { attention, intermediate });
    }
    let pooler = c.include_pooler.then(|| Linear::build(&mut store, "pooler", h, h, &mut rng));
    Ok(EncoderStack { config: config.clone(), seed, params: store, embeddings, blocks, pooler })
}

impl EncoderStack {
    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn embeddings(&self) -> &Embeddings {
        &self.embeddings
    }

    pub fn pooler(&self) -> Option<&Linear> {
        self.pooler.as_ref()
    }

    pub fn num_intermediate_units(&self) -> usize {
        self.blocks.iter().filter(|b| b.intermediate.is_some()).count()
    }

    /// Element count of every parameter tensor in the built stack.
    pub fn enumerate_parameters(&self) -> u64 {
        self.params.total_elements()
    }

    pub fn attention_spec(&self) -> AttentionSpec {
        AttentionSpec {
            heads: self.config.num_heads,
            kind: self.config.attention_kind,
            eps: self.config.eps,
            output_dropout: self.config.attn_output_dropout_rate,
        }
    }

    fn check_batch(&self, batch: &TokenBatch) -> Result<()> {
        if batch.seq_len > self.config.max_position {
            return Err(Error::Input(format!(
                "sequence length {} exceeds max_position {}",
                batch.seq_len, self.config.max_position
            )));
        }
        if let Some(&bad) = batch.ids.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Input(format!("token id {bad} outside vocabulary of {}", self.config.vocab_size)));
        }
        Ok(())
    }

    /// Token + position + type embeddings followed by the embedding
    /// layernorm, as `[B, S, H]`.
    pub fn embed(&self, tape: &Tape, batch: &TokenBatch) -> Result<Var> {
        self.check_batch(batch)?;
        let (b, s, h) = (batch.batch, batch.seq_len, self.config.hidden_size);
        let e = &self.embeddings;
        let tok = tape.gather_rows(&self.params.bind(tape, e.token), &batch.ids)?;
        let positions: Vec<usize> = (0..b).flat_map(|_| 0..s).collect();
        let pos = tape.gather_rows(&self.params.bind(tape, e.position), &positions)?;
        let typ = tape.gather_rows(&self.params.bind(tape, e.token_type), &vec![0; b * s])?;
        let sum = tape.add(&tape.add(&tok, &pos)?, &typ)?;
        let sum = tape.reshape(&sum, &[b, s, h])?;
        e.layernorm.apply(&self.params, tape, &sum, self.config.eps)
    }

    /// Runs one block on `[B, S, H]` hidden states.
    pub fn block_forward(
        &self,
        tape: &Tape,
        index: usize,
        x: &Var,
        mask: &KeyMask,
        training: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Var> {
        let block = &self.blocks[index];
        let eps = self.config.eps;
        let spec = self.attention_spec();
        let weights = block.attention.bind(&self.params, tape);
        let attn = self_attention(tape, x, mask, &weights, &spec, training, rng)?;
        let mut x = tape.add(x, &attn)?;
        if let Some(norm) = &block.attention.layernorm {
            x = norm.apply(&self.params, tape, &x, eps)?;
        }
        if let Some(unit) = &block.intermediate {
            let up = unit.up.bind(&self.params, tape).apply(tape, &x)?;
            let act = tape.gelu(&up);
            let down = unit.down.bind(&self.params, tape).apply(tape, &act)?;
            let down = tape.dropout(&down, self.config.intermediate_dropout_rate, training, rng)?;
            x = tape.add(&x, &down)?;
            if let Some(norm) = &unit.layernorm {
                x = norm.apply(&self.params, tape, &x, eps)?;
            }
        }
        Ok(x)
    }

    /// Final hidden states `[B, S, H]`.
    pub fn forward(&self, tape: &Tape, batch: &TokenBatch, training: bool, rng: &mut dyn RngCore) -> Result<Var> {
        let mut x = self.embed(tape, batch)?;
        for i in 0..self.blocks.len() {
            x = self.block_forward(tape, i, &x, &batch.mask, training, rng)?;
        }
        Ok(x)
    }

    /// First-position summary `[B, H]`: `tanh(h_0 W + b)` with a pooler,
    /// otherwise `h_0` itself.
    pub fn pool(&self, tape: &Tape, hidden: &Var) -> Result<Var> {
        let shape = hidden.shape();
        if shape.len() != 3 {
            return Err(Error::dim(format!("pool expects [B, S, H], got {shape:?}")));
        }
        let (b, s) = (shape[0], shape[1]);
        let first: Vec<usize> = (0..b).map(|i| i * s).collect();
        let h0 = tape.gather_rows(hidden, &first)?;
        match &self.pooler {
            Some(lin) => Ok(tape.tanh(&lin.bind(&self.params, tape).apply(tape, &h0)?)),
            None => Ok(h0),
        }
    }
}
