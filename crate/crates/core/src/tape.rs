//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every differentiable operation is a method on [`Tape`]. When gradients
//! are enabled and at least one input requires a gradient, the operation
//! appends a record holding its output and a backward rule. [`Tape::backward`]
//! walks the records once, newest first, handing each rule the gradient of
//! its output.
//!
//! A no-grad tape records nothing, so intermediate values are freed as soon
//! as the caller drops them. That is the mode used for inference benchmarks.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Identifies a trainable parameter: a store group plus an index inside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey {
    pub group: u16,
    pub index: u32,
}

/// Operation tags, used for fault injection and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    MatMul,
    Add,
    AddBias,
    Mul,
    Scale,
    Sum,
    SumSquares,
    Reshape,
    Gather,
    Gelu,
    Tanh,
    Dropout,
    Softmax,
    Normalize,
    LayerNorm,
    CrossEntropy,
    AttentionLogits,
    AttentionMix,
}

impl OpKind {
    pub const ALL: [OpKind; 18] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::AddBias,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::Sum,
        OpKind::SumSquares,
        OpKind::Reshape,
        OpKind::Gather,
        OpKind::Gelu,
        OpKind::Tanh,
        OpKind::Dropout,
        OpKind::Softmax,
        OpKind::Normalize,
        OpKind::LayerNorm,
        OpKind::CrossEntropy,
        OpKind::AttentionLogits,
        OpKind::AttentionMix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::AddBias => "add_bias",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Sum => "sum",
            OpKind::SumSquares => "sum_squares",
            OpKind::Reshape => "reshape",
            OpKind::Gather => "gather_rows",
            OpKind::Gelu => "gelu",
            OpKind::Tanh => "tanh",
            OpKind::Dropout => "dropout",
            OpKind::Softmax => "softmax_rows",
            OpKind::Normalize => "normalize_rows",
            OpKind::LayerNorm => "layer_norm",
            OpKind::CrossEntropy => "cross_entropy_logits",
            OpKind::AttentionLogits => "attention_logits",
            OpKind::AttentionMix => "attention_mix",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

struct Node {
    id: usize,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

/// A value produced on a tape. Cloning is cheap (reference counted).
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl Var {
    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Value of a single-element var.
    pub fn item(&self) -> Option<f64> {
        (self.0.data.len() == 1).then(|| self.0.data[0])
    }

    /// Copies the value out into a standalone tensor.
    pub fn to_tensor(&self) -> Tensor {
        if self.0.shape.is_empty() {
            return Tensor::scalar(self.0.data[0]);
        }
        Tensor::new(self.0.shape.clone(), self.0.data.clone()).expect("var shape is valid")
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

/// Gradient accumulator handed to backward rules.
pub(crate) struct GradSink {
    grads: Vec<Option<Vec<f64>>>,
}

impl GradSink {
    /// Mutable gradient buffer for `v`, or `None` when `v` needs no gradient.
    pub fn buf(&mut self, v: &Var) -> Option<&mut [f64]> {
        if !v.requires_grad() {
            return None;
        }
        let slot = &mut self.grads[v.id()];
        Some(slot.get_or_insert_with(|| vec![0.0; v.numel()]).as_mut_slice())
    }

    pub fn add(&mut self, v: &Var, g: &[f64]) {
        if let Some(buf) = self.buf(v) {
            buf.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
}

type BackwardRule = Box<dyn Fn(&[f64], &mut GradSink)>;

struct Record {
    kind: OpKind,
    output: Var,
    rule: BackwardRule,
}

/// Recording context for one forward/backward pass. Single-threaded.
pub struct Tape {
    next_id: Cell<usize>,
    records: RefCell<Vec<Record>>,
    params: RefCell<Vec<(ParamKey, Var)>>,
    grad_enabled: bool,
    flops: Option<Cell<u64>>,
    fault: Option<OpKind>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            next_id: Cell::new(0),
            records: RefCell::new(Vec::new()),
            params: RefCell::new(Vec::new()),
            grad_enabled: true,
            flops: None,
            fault: None,
        }
    }

    /// A tape that never records; every output has `requires_grad == false`.
    pub fn no_grad() -> Self {
        Self { grad_enabled: false, ..Self::new() }
    }

    /// Enables the per-operation floating-point operation counter.
    pub fn with_flop_counter(mut self) -> Self {
        self.flops = Some(Cell::new(0));
        self
    }

    /// Scales the incoming gradient of every `kind` record by 1.5 during
    /// backward. Used as a negative control for gradient checks.
    #[doc(hidden)]
    pub fn with_fault(mut self, kind: OpKind) -> Self {
        self.fault = Some(kind);
        self
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn flop_count(&self) -> Option<u64> {
        self.flops.as_ref().map(Cell::get)
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn alloc(&self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Var {
        let id = self.next_id.get();
        self.next_id.set(id + 1);
        Var(Rc::new(Node { id, shape, data, requires_grad }))
    }

    /// Moves a tensor onto the tape as a leaf.
    pub fn leaf(&self, t: Tensor) -> Var {
        let requires_grad = self.grad_enabled && t.requires_grad();
        let shape = t.shape().to_vec();
        self.alloc(shape, t.into_data(), requires_grad)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), data)?;
        Ok(self.leaf(t))
    }

    /// Copies a parameter onto the tape and remembers the binding so that
    /// [`Gradients::param`] can report its gradient.
    pub fn param(&self, key: ParamKey, t: &Tensor) -> Var {
        let requires_grad = self.grad_enabled && t.requires_grad();
        let v = self.alloc(t.shape().to_vec(), t.data().to_vec(), requires_grad);
        if requires_grad {
            self.params.borrow_mut().push((key, v.clone()));
        }
        v
    }

    pub(crate) fn count(&self, n: u64) {
        if let Some(c) = &self.flops {
            c.set(c.get() + n);
        }
    }

    /// Whether an op over `inputs` has to be recorded.
    pub(crate) fn tracks(&self, inputs: &[&Var]) -> bool {
        self.grad_enabled && inputs.iter().any(|v| v.requires_grad())
    }

    pub(crate) fn push(
        &self,
        kind: OpKind,
        shape: Vec<usize>,
        data: Vec<f64>,
        track: bool,
        rule: impl Fn(&[f64], &mut GradSink) + 'static,
    ) -> Var {
        let out = self.alloc(shape, data, track);
        if track {
            self.records.borrow_mut().push(Record { kind, output: out.clone(), rule: Box::new(rule) });
        }
        out
    }

    /// Propagates gradients from the scalar `loss` back to every leaf.
    ///
    /// The tape itself is left untouched, so calling this twice yields the
    /// same gradients again; accumulation happens only when the caller
    /// folds the result into parameter tensors.
    pub fn backward(&self, loss: &Var) -> Result<Gradients> {
        if loss.numel() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", loss.shape())));
        }
        let mut sink = GradSink { grads: vec![None; self.next_id.get()] };
        if loss.requires_grad() {
            sink.grads[loss.id()] = Some(vec![1.0]);
        }
        let records = self.records.borrow();
        for rec in records.iter().rev() {
            let id = rec.output.id();
            if id >= sink.grads.len() {
                continue;
            }
            let Some(mut g) = sink.grads[id].take() else {
                continue;
            };
            if self.fault == Some(rec.kind) {
                g.iter_mut().for_each(|v| *v *= 1.5);
            }
            (rec.rule)(&g, &mut sink);
        }
        let params = self.params.borrow().iter().map(|(k, v)| (*k, v.id())).collect();
        Ok(Gradients { grads: sink.grads, params })
    }
}

/// Result of [`Tape::backward`]: gradients of every leaf that needed one.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamKey, usize)>,
}

impl Gradients {
    /// Gradient of a leaf var. Leaves that did not influence the loss have
    /// an all-zero gradient reported as `None`.
    pub fn get(&self, v: &Var) -> Option<&[f64]> {
        self.grads.get(v.id()).and_then(|g| g.as_deref())
    }

    /// Iterates `(key, gradient)` for every bound parameter that received one.
    pub fn params(&self) -> impl Iterator<Item = (ParamKey, &[f64])> + '_ {
        self.params.iter().filter_map(|(k, id)| self.grads[*id].as_deref().map(|g| (*k, g)))
    }

    /// Euclidean norm over all parameter gradients.
    pub fn global_norm(&self) -> f64 {
        self.params().flat_map(|(_, g)| g.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }
}
