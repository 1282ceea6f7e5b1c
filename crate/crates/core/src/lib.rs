//! A configurable BERT-style encoder workbench.
//!
//! Three architectural axes can be combined freely:
//!
//! * intermediate period: one feed-forward unit after every `n` attention
//!   units (or none at all),
//! * attention scores from softmax or from a per-head standardization with
//!   learned gain and bias, which also removes the post-attention dropout,
//! * removal of the layernorm that follows each feed-forward unit.
//!
//! The crate carries its own small reverse-mode autodiff engine ([`tape`]),
//! an exact parameter and FLOP model, a toy-scale training harness and an
//! inference throughput benchmark.

// `!(x < y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod bench;
pub mod config;
pub mod error;
pub mod gradcheck;
mod kernels;
pub mod kv;
pub mod model;
pub mod ops;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod train;

pub use config::{table1_variants, AttentionKind, AttnLayerNorm, EncoderConfig, IntermediatePeriod, MlpLayerNorm};
pub use error::{CheckpointError, Error, Result};
pub use model::{
    build_stack, count_parameters, intermediate_positions, size_ratio, EncoderStack, ParamCount, TokenBatch,
};
pub use ops::KeyMask;
pub use tape::{Gradients, OpKind, ParamKey, Tape, Var};
pub use tensor::Tensor;
