//! Named parameter storage shared by the encoder and task heads.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tape::{Gradients, ParamKey, Tape, Var};
use crate::tensor::Tensor;

/// What a parameter is, which decides initialization and L2 eligibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    /// Lookup table; initialized like a weight matrix.
    Embedding,
    Weight,
    Bias,
    /// Layernorm or score-normalization gain (init 1).
    Gain,
    /// Layernorm or score-normalization bias (init 0).
    Shift,
}

impl ParamRole {
    /// Weight matrices and embedding tables; excludes biases and gains.
    pub fn is_matrix(self) -> bool {
        matches!(self, ParamRole::Embedding | ParamRole::Weight)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub role: ParamRole,
    pub tensor: Tensor,
}

/// Ordered parameters of one model component. The order is the build
/// order and therefore also the checkpoint order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    group: u16,
    entries: Vec<ParamEntry>,
}

pub const INIT_STD: f64 = 0.02;

/// Normal(0, std) truncated to two standard deviations.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, std: f64, n: usize) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v: f64 = dist.sample(rng);
        if v.abs() <= 2.0 * std {
            out.push(v);
        }
    }
    out
}

impl ParamStore {
    pub fn new(group: u16) -> Self {
        Self { group, entries: Vec::new() }
    }

    pub fn group(&self) -> u16 {
        self.group
    }

    /// Adds a parameter initialized according to its role.
    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        role: ParamRole,
        rng: &mut R,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let data = match role {
            ParamRole::Embedding | ParamRole::Weight => truncated_normal(rng, INIT_STD, n),
            ParamRole::Bias | ParamRole::Shift => vec![0.0; n],
            ParamRole::Gain => vec![1.0; n],
        };
        let tensor = Tensor::new(shape.to_vec(), data).expect("parameter shapes are positive").with_requires_grad(true);
        self.entries.push(ParamEntry { name: name.into(), role, tensor });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn key(&self, id: ParamId) -> ParamKey {
        ParamKey { group: self.group, index: id.0 as u32 }
    }

    /// Puts a parameter on the tape.
    pub fn bind(&self, tape: &Tape, id: ParamId) -> Var {
        tape.param(self.key(id), self.get(id))
    }

    /// Total number of scalar parameters.
    pub fn total_elements(&self) -> u64 {
        self.entries.iter().map(|e| e.tensor.numel() as u64).sum()
    }

    /// Folds this group's gradients into the tensors' grad buffers.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (key, g) in grads.params() {
            if key.group == self.group {
                self.entries[key.index as usize].tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.entries.iter_mut().for_each(|e| e.tensor.zero_grad());
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry> {
        self.entries.iter_mut()
    }
}
