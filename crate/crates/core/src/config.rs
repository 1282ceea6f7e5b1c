//! Architectural description of an encoder variant.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::{read, KvRecord};

/// How often an intermediate (feed-forward) unit follows the attention units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntermediatePeriod {
    /// One intermediate unit after every `k` attention units.
    Every(usize),
    /// No intermediate units at all.
    None,
}

impl IntermediatePeriod {
    pub fn every(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("period", "period must be at least 1"));
        }
        Ok(Self::Every(k))
    }
}

impl fmt::Display for IntermediatePeriod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Every(k) => write!(f, "every:{k}"),
            Self::None => f.write_str("none"),
        }
    }
}

impl FromStr for IntermediatePeriod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "none" {
            return Ok(Self::None);
        }
        let k = s
            .strip_prefix("every:")
            .and_then(|k| k.parse::<usize>().ok())
            .ok_or_else(|| Error::config("period", format!("expected `every:<k>` or `none`, got `{s}`")))?;
        Self::every(k)
    }
}

/// Score function applied to the attention logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttentionKind {
    Softmax,
    /// Per-row standardization with learned per-head gain and bias.
    NormalizedBandd,
}

/// Whether the layernorm after each intermediate unit is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MlpLayerNorm {
    Keep,
    Remove,
}

/// Whether the layernorm after each attention unit is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttnLayerNorm {
    Keep,
    /// Known to destabilize training; needs `ablation_acknowledged`.
    RemoveAblation,
}

macro_rules! text_enum {
    ($ty:ident, $key:literal, $($variant:ident => $text:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($text => Ok(Self::$variant),)+
                    other => Err(Error::config($key, format!("unknown value `{other}`"))),
                }
            }
        }
    };
}

text_enum!(AttentionKind, "attention_kind", Softmax => "softmax", NormalizedBandd => "normalized_bandd");
text_enum!(MlpLayerNorm, "mlp_layernorm", Keep => "keep", Remove => "remove");
text_enum!(AttnLayerNorm, "attn_layernorm", Keep => "keep", RemoveAblation => "remove_ablation");

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub hidden_size: usize,
    pub num_heads: usize,
    pub intermediate_size: usize,
    pub num_attention_blocks: usize,
    pub period: IntermediatePeriod,
    pub attention_kind: AttentionKind,
    pub mlp_layernorm: MlpLayerNorm,
    pub attn_layernorm: AttnLayerNorm,
    pub attn_output_dropout_rate: f64,
    pub intermediate_dropout_rate: f64,
    pub vocab_size: usize,
    pub max_position: usize,
    pub type_vocab: usize,
    pub include_pooler: bool,
    pub eps: f64,
    pub ablation_acknowledged: bool,
}

const KEYS: [&str; 16] = [
    "hidden_size",
    "num_heads",
    "intermediate_size",
    "num_attention_blocks",
    "period",
    "attention_kind",
    "mlp_layernorm",
    "attn_layernorm",
    "attn_output_dropout_rate",
    "intermediate_dropout_rate",
    "vocab_size",
    "max_position",
    "type_vocab",
    "include_pooler",
    "eps",
    "ablation_acknowledged",
];

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl EncoderConfig {
    /// The standard BERT-BASE shape.
    pub fn bert_base() -> Self {
        Self {
            hidden_size: 768,
            num_heads: 12,
            intermediate_size: 3072,
            num_attention_blocks: 12,
            period: IntermediatePeriod::Every(1),
            attention_kind: AttentionKind::Softmax,
            mlp_layernorm: MlpLayerNorm::Keep,
            attn_layernorm: AttnLayerNorm::Keep,
            attn_output_dropout_rate: 0.1,
            intermediate_dropout_rate: 0.1,
            vocab_size: 30522,
            max_position: 512,
            type_vocab: 2,
            include_pooler: true,
            eps: 1e-6,
            ablation_acknowledged: false,
        }
    }

    /// Desk-scale default: H=64, A=4, I=256, m=4, V=256.
    pub fn toy() -> Self {
        Self {
            hidden_size: 64,
            num_heads: 4,
            intermediate_size: 256,
            num_attention_blocks: 4,
            vocab_size: 256,
            max_position: 128,
            ..Self::bert_base()
        }
    }

    pub fn with_period(mut self, period: IntermediatePeriod) -> Self {
        self.period = period;
        self
    }

    /// Normalized attention scores; also drops the attention-output dropout.
    pub fn with_bandd(mut self) -> Self {
        self.attention_kind = AttentionKind::NormalizedBandd;
        self.attn_output_dropout_rate = 0.0;
        self
    }

    pub fn with_no_mlp_layernorm(mut self) -> Self {
        self.mlp_layernorm = MlpLayerNorm::Remove;
        self
    }

    /// Removes the attention-side layernorms and records the acknowledgment.
    pub fn with_attn_layernorm_ablation(mut self) -> Self {
        self.attn_layernorm = AttnLayerNorm::RemoveAblation;
        self.ablation_acknowledged = true;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn is_bandd(&self) -> bool {
        self.attention_kind == AttentionKind::NormalizedBandd
    }

    /// Checks every invariant, naming the offending key on failure.
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("hidden_size", self.hidden_size),
            ("num_heads", self.num_heads),
            ("intermediate_size", self.intermediate_size),
            ("num_attention_blocks", self.num_attention_blocks),
            ("vocab_size", self.vocab_size),
            ("max_position", self.max_position),
            ("type_vocab", self.type_vocab),
        ];
        for (key, v) in sizes {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(Error::config(
                "num_heads",
                format!("hidden_size {} is not divisible by {} heads", self.hidden_size, self.num_heads),
            ));
        }
        if let IntermediatePeriod::Every(0) = self.period {
            return Err(Error::config("period", "period must be at least 1"));
        }
        for (key, r) in [
            ("attn_output_dropout_rate", self.attn_output_dropout_rate),
            ("intermediate_dropout_rate", self.intermediate_dropout_rate),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::config(key, format!("rate {r} outside [0, 1)")));
            }
        }
        if self.is_bandd() && self.attn_output_dropout_rate != 0.0 {
            return Err(Error::config(
                "attn_output_dropout_rate",
                "normalized_bandd attention requires no dropout after self-attention",
            ));
        }
        if self.attn_layernorm == AttnLayerNorm::RemoveAblation && !self.ablation_acknowledged {
            return Err(Error::config(
                "attn_layernorm",
                "remove_ablation is the divergent configuration; set ablation_acknowledged = true",
            ));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps", "must be positive"));
        }
        Ok(())
    }

    /// Short label such as `bandd+nomlpln+every:2`.
    pub fn variant_name(&self) -> String {
        let mut parts = Vec::new();
        if self.is_bandd() {
            parts.push("bandd".to_string());
        }
        if self.mlp_layernorm == MlpLayerNorm::Remove {
            parts.push("nomlpln".to_string());
        }
        if self.attn_layernorm == AttnLayerNorm::RemoveAblation {
            parts.push("noattnln".to_string());
        }
        parts.push(self.period.to_string());
        parts.join("+")
    }

    pub fn to_kv(&self) -> KvRecord {
        let mut rec = KvRecord::default();
        rec.push("hidden_size", self.hidden_size);
        rec.push("num_heads", self.num_heads);
        rec.push("intermediate_size", self.intermediate_size);
        rec.push("num_attention_blocks", self.num_attention_blocks);
        rec.push("period", self.period);
        rec.push("attention_kind", self.attention_kind);
        rec.push("mlp_layernorm", self.mlp_layernorm);
        rec.push("attn_layernorm", self.attn_layernorm);
        rec.push("attn_output_dropout_rate", self.attn_output_dropout_rate);
        rec.push("intermediate_dropout_rate", self.intermediate_dropout_rate);
        rec.push("vocab_size", self.vocab_size);
        rec.push("max_position", self.max_position);
        rec.push("type_vocab", self.type_vocab);
        rec.push("include_pooler", self.include_pooler);
        rec.push("eps", self.eps);
        rec.push("ablation_acknowledged", self.ablation_acknowledged);
        rec
    }

    /// Reads a config record. Missing keys keep the toy defaults; unknown
    /// keys and invariant violations are errors.
    pub fn from_kv(rec: &KvRecord) -> Result<Self> {
        rec.reject_unknown(&KEYS)?;
        let mut c = Self::toy();
        read(rec, "hidden_size", &mut c.hidden_size)?;
        read(rec, "num_heads", &mut c.num_heads)?;
        read(rec, "intermediate_size", &mut c.intermediate_size)?;
        read(rec, "num_attention_blocks", &mut c.num_attention_blocks)?;
        if let Some(v) = rec.get("period") {
            c.period = v.parse()?;
        }
        if let Some(v) = rec.get("attention_kind") {
            c.attention_kind = v.parse()?;
            // BANDD drops the attention-output dropout unless the file says otherwise.
            if c.is_bandd() && rec.get("attn_output_dropout_rate").is_none() {
                c.attn_output_dropout_rate = 0.0;
            }
        }
        if let Some(v) = rec.get("mlp_layernorm") {
            c.mlp_layernorm = v.parse()?;
        }
        if let Some(v) = rec.get("attn_layernorm") {
            c.attn_layernorm = v.parse()?;
        }
        read(rec, "attn_output_dropout_rate", &mut c.attn_output_dropout_rate)?;
        read(rec, "intermediate_dropout_rate", &mut c.intermediate_dropout_rate)?;
        read(rec, "vocab_size", &mut c.vocab_size)?;
        read(rec, "max_position", &mut c.max_position)?;
        read(rec, "type_vocab", &mut c.type_vocab)?;
        read(rec, "include_pooler", &mut c.include_pooler)?;
        read(rec, "eps", &mut c.eps)?;
        read(rec, "ablation_acknowledged", &mut c.ablation_acknowledged)?;
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KvRecord::parse(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.to_kv().to_text()
    }
}

/// The nine variant flag combinations compared in the variant size table, on
/// top of `base`.
pub fn table1_variants(base: &EncoderConfig) -> Vec<EncoderConfig> {
    let every = |k| base.clone().with_period(IntermediatePeriod::Every(k));
    let none = base.clone().with_period(IntermediatePeriod::None);
    vec![
        every(1),
        every(2),
        none.clone(),
        every(1).with_bandd(),
        every(1).with_no_mlp_layernorm(),
        every(1).with_bandd().with_no_mlp_layernorm(),
        every(2).with_bandd(),
        every(2).with_no_mlp_layernorm(),
        none.with_bandd().with_no_mlp_layernorm(),
    ]
}
