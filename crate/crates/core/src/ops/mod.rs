//! Differentiable operations, implemented as methods on [`Tape`](crate::tape::Tape).
//!
//! Forward FLOP costs charged to the tape counter follow one convention:
//! a multiply-add is 2 FLOPs and every other arithmetic primitive (add,
//! multiply, exp, div, sqrt, tanh, erf) is 1. Composite elementwise ops use
//! the per-element constants below.

mod activation;
mod attention;
mod basic;
mod loss;
mod norm;

use crate::error::{Error, Result};

/// FLOPs charged per element of GELU.
pub const GELU_FLOPS: u64 = 5;
/// FLOPs charged per element of a softmax row.
pub const SOFTMAX_FLOPS: u64 = 5;
/// FLOPs charged per element of the attention-score standardization.
pub const NORMALIZE_FLOPS: u64 = 4;
/// FLOPs charged per element of a layer normalization.
pub const LAYERNORM_FLOPS: u64 = 5;

/// Per-batch validity of key positions, shape `[batch, keys]`.
///
/// A row-structured tensor `[..., keys]` with `R` rows is split evenly over
/// the batch, so row `r` belongs to batch entry `r / (R / batch)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyMask {
    batch: usize,
    keys: usize,
    valid: Vec<bool>,
}

impl KeyMask {
    pub fn new(batch: usize, keys: usize, valid: Vec<bool>) -> Result<Self> {
        if batch * keys != valid.len() || batch == 0 || keys == 0 {
            return Err(Error::dim(format!("mask of {} entries cannot be [{batch}, {keys}]", valid.len())));
        }
        Ok(Self { batch, keys, valid })
    }

    /// Every key valid.
    pub fn all(batch: usize, keys: usize) -> Self {
        Self { batch, keys, valid: vec![true; batch * keys] }
    }

    /// Keys `0..lengths[b]` valid for each batch entry.
    pub fn from_lengths(keys: usize, lengths: &[usize]) -> Result<Self> {
        let mut valid = Vec::with_capacity(keys * lengths.len());
        for &len in lengths {
            if len > keys {
                return Err(Error::Input(format!("length {len} exceeds {keys} keys")));
            }
            valid.extend((0..keys).map(|j| j < len));
        }
        Self::new(lengths.len(), keys, valid)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn keys(&self) -> usize {
        self.keys
    }

    pub fn is_valid(&self, batch: usize, key: usize) -> bool {
        self.valid[batch * self.keys + key]
    }

    pub fn row(&self, batch: usize) -> &[bool] {
        &self.valid[batch * self.keys..(batch + 1) * self.keys]
    }

    /// Checks the mask against a row-structured tensor and returns the
    /// number of rows per batch entry.
    pub(crate) fn rows_per_batch(&self, shape: &[usize]) -> Result<usize> {
        let n = *shape.last().unwrap_or(&1);
        let rows: usize = shape.iter().product::<usize>() / n.max(1);
        if n != self.keys || !rows.is_multiple_of(self.batch) {
            return Err(Error::dim(format!("mask [{}, {}] does not fit tensor {shape:?}", self.batch, self.keys)));
        }
        Ok(rows / self.batch)
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn same_shape(op: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::dim(format!("{op}: shapes {a:?} and {b:?} differ")));
    }
    Ok(())
}
