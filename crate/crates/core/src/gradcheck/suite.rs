//! The standard finite-difference suite: every differentiable op on its
//! own, plus whole attention units of both kinds and a feed-forward unit,
//! all at shapes taken from an encoder config.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::attention::{self_attention, AttentionSpec, AttentionWeights, BoundLinear};
use crate::config::{AttentionKind, EncoderConfig};
use crate::error::{Error, Result};
use crate::ops::KeyMask;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::{grad_check, GradCheckOptions, GradCheckReport};

/// Largest hidden size the suite accepts.
pub const MAX_HIDDEN: usize = 256;

const BATCH: usize = 2;
const SEQ: usize = 5;
/// Valid keys per sequence; the second sequence is padded.
const LENGTHS: [usize; 2] = [5, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpSuite {
    All,
    Attention,
    Norm,
    Mlp,
}

impl fmt::Display for OpSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpSuite::All => "all",
            OpSuite::Attention => "attention",
            OpSuite::Norm => "norm",
            OpSuite::Mlp => "mlp",
        })
    }
}

impl FromStr for OpSuite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(OpSuite::All),
            "attention" => Ok(OpSuite::Attention),
            "norm" => Ok(OpSuite::Norm),
            "mlp" => Ok(OpSuite::Mlp),
            other => Err(Error::config("ops", format!("expected all|attention|norm|mlp, got `{other}`"))),
        }
    }
}

type Program = Box<dyn Fn(&Tape, &[Var]) -> Result<Var>>;

/// One scalar program and the inputs it is differentiated against.
pub struct GradCase {
    pub name: String,
    pub suites: Vec<OpSuite>,
    pub inputs: Vec<Tensor>,
    pub program: Program,
}

impl GradCase {
    fn new(
        name: &str,
        suites: &[OpSuite],
        inputs: Vec<Tensor>,
        program: impl Fn(&Tape, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Self { name: name.to_string(), suites: suites.to_vec(), inputs, program: Box::new(program) }
    }

    pub fn run(&self, opts: &GradCheckOptions) -> Result<GradCheckReport> {
        grad_check(&self.name, &*self.program, &self.inputs, opts)
    }
}

struct Gen(ChaCha8Rng);

impl Gen {
    fn tensor(&mut self, shape: &[usize], std: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("positive std");
        Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(&mut self.0)).collect()).expect("non-empty shape")
    }
}

/// `sum(y * w)` with fixed weights, so every output element matters and
/// shift-invariant outputs still get non-trivial gradients.
fn project(tape: &Tape, y: &Var, w: &Tensor) -> Result<Var> {
    let w = tape.constant(y.shape(), w.data().to_vec())?;
    Ok(tape.sum(&tape.mul(y, &w)?))
}

fn projected(
    gen: &mut Gen,
    shape: &[usize],
    body: impl Fn(&Tape, &[Var]) -> Result<Var> + 'static,
) -> impl Fn(&Tape, &[Var]) -> Result<Var> + 'static {
    let w = gen.tensor(shape, 1.0);
    move |t: &Tape, v: &[Var]| project(t, &body(t, v)?, &w)
}

fn padded_mask() -> KeyMask {
    KeyMask::from_lengths(SEQ, &LENGTHS).expect("lengths fit")
}

fn attention_case(gen: &mut Gen, h: usize, heads: usize, kind: AttentionKind) -> GradCase {
    let wstd = 1.0 / (h as f64).sqrt();
    let mut inputs = vec![gen.tensor(&[BATCH, SEQ, h], 1.0)];
    for _ in 0..4 {
        inputs.push(gen.tensor(&[h, h], wstd));
        inputs.push(gen.tensor(&[h], 0.1));
    }
    if kind == AttentionKind::NormalizedBandd {
        inputs.push(gen.tensor(&[heads], 0.5));
        inputs.push(gen.tensor(&[heads], 0.5));
    }
    let spec = AttentionSpec { heads, kind, eps: 1e-6, output_dropout: 0.0 };
    let name = match kind {
        AttentionKind::Softmax => "attention_unit.softmax",
        AttentionKind::NormalizedBandd => "attention_unit.normalized",
    };
    let body = move |t: &Tape, v: &[Var]| {
        let lin = |i: usize| BoundLinear { weight: v[i].clone(), bias: v[i + 1].clone() };
        let w = AttentionWeights {
            query: lin(1),
            key: lin(3),
            value: lin(5),
            output: lin(7),
            score_gain: v.get(9).cloned(),
            score_bias: v.get(10).cloned(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self_attention(t, &v[0], &padded_mask(), &w, &spec, false, &mut rng)
    };
    let program = projected(gen, &[BATCH, SEQ, h], body);
    GradCase::new(name, &[OpSuite::Attention], inputs, program)
}

/// Builds the suite for the shapes of `config`.
pub fn standard_cases(config: &EncoderConfig) -> Result<Vec<GradCase>> {
    config.validate()?;
    if config.hidden_size > MAX_HIDDEN {
        return Err(Error::config(
            "hidden_size",
            format!("{} exceeds {MAX_HIDDEN}; finite differences at this size are not tractable", config.hidden_size),
        ));
    }
    use OpSuite::{Attention as A, Mlp as M, Norm as N};
    let (h, heads, inter) = (config.hidden_size, config.num_heads, config.intermediate_size);
    let d = h / heads;
    let mut gen = Gen(ChaCha8Rng::seed_from_u64(0x5eed));
    let g = &mut gen;
    let mut cases = Vec::new();

    let x = g.tensor(&[BATCH, SEQ, h], 1.0);
    let w = g.tensor(&[h, 3], 0.5);
    cases.push(GradCase::new(
        "matmul",
        &[M],
        vec![x.clone(), w],
        projected(g, &[BATCH, SEQ, 3], |t, v| t.matmul(&v[0], &v[1])),
    ));
    let y = g.tensor(&[BATCH, SEQ, h], 1.0);
    cases.push(GradCase::new(
        "add",
        &[M],
        vec![x.clone(), y.clone()],
        projected(g, &[BATCH, SEQ, h], |t, v| t.add(&v[0], &v[1])),
    ));
    let bias = g.tensor(&[h], 1.0);
    cases.push(GradCase::new(
        "add_bias",
        &[M],
        vec![x.clone(), bias.clone()],
        projected(g, &[BATCH, SEQ, h], |t, v| t.add_bias(&v[0], &v[1])),
    ));
    cases.push(GradCase::new(
        "mul",
        &[],
        vec![x.clone(), y],
        projected(g, &[BATCH, SEQ, h], |t, v| t.mul(&v[0], &v[1])),
    ));
    cases.push(GradCase::new(
        "scale",
        &[],
        vec![x.clone()],
        projected(g, &[BATCH, SEQ, h], |t, v| Ok(t.scale(&v[0], -0.7))),
    ));
    cases.push(GradCase::new("sum", &[], vec![x.clone()], |t, v| Ok(t.sum(&t.mul(&v[0], &v[0])?))));
    cases.push(GradCase::new("sum_squares", &[], vec![x.clone()], |t, v| Ok(t.sum_squares(&v[0]))));
    cases.push(GradCase::new(
        "reshape",
        &[],
        vec![x.clone()],
        projected(g, &[BATCH * SEQ, h], move |t, v| t.reshape(&v[0], &[BATCH * SEQ, h])),
    ));
    let table = g.tensor(&[7, h], 1.0);
    cases.push(GradCase::new(
        "gather_rows",
        &[],
        vec![table],
        projected(g, &[5, h], |t, v| t.gather_rows(&v[0], &[3, 0, 3, 6, 1])),
    ));
    cases.push(GradCase::new("gelu", &[M], vec![x.clone()], projected(g, &[BATCH, SEQ, h], |t, v| Ok(t.gelu(&v[0])))));
    cases.push(GradCase::new("tanh", &[], vec![x.clone()], projected(g, &[BATCH, SEQ, h], |t, v| Ok(t.tanh(&v[0])))));
    cases.push(GradCase::new(
        "dropout",
        &[M],
        vec![x.clone()],
        projected(g, &[BATCH, SEQ, h], |t, v| {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            t.dropout(&v[0], 0.3, true, &mut rng)
        }),
    ));

    let logits = g.tensor(&[BATCH, heads, SEQ, SEQ], 1.5);
    cases.push(GradCase::new(
        "softmax_rows",
        &[A, N],
        vec![logits.clone()],
        projected(g, &[BATCH, heads, SEQ, SEQ], |t, v| t.softmax_rows(&v[0], Some(&padded_mask()))),
    ));
    let (gain, shift) = (g.tensor(&[heads], 0.8), g.tensor(&[heads], 0.5));
    cases.push(GradCase::new(
        "normalize_rows",
        &[A, N],
        vec![logits.clone(), gain, shift],
        projected(g, &[BATCH, heads, SEQ, SEQ], |t, v| {
            t.normalize_rows(&v[0], &v[1], &v[2], 1e-6, Some(&padded_mask()))
        }),
    ));
    let (ln_gain, ln_bias) = (g.tensor(&[h], 0.8), g.tensor(&[h], 0.5));
    cases.push(GradCase::new(
        "layer_norm",
        &[N],
        vec![x.clone(), ln_gain.clone(), ln_bias.clone()],
        projected(g, &[BATCH, SEQ, h], |t, v| t.layer_norm(&v[0], &v[1], &v[2], 1e-6)),
    ));
    let class_logits = g.tensor(&[6, 9], 2.0);
    cases.push(GradCase::new("cross_entropy_logits", &[], vec![class_logits], |t, v| {
        t.cross_entropy_logits(&v[0], &[0, 8, 3, 3, 5, 1])
    }));
    let scale = 1.0 / (d as f64).sqrt();
    cases.push(GradCase::new(
        "attention_logits",
        &[A],
        vec![x.clone(), g.tensor(&[BATCH, SEQ, h], 1.0)],
        projected(g, &[BATCH, heads, SEQ, SEQ], move |t, v| t.attention_logits(&v[0], &v[1], heads, scale)),
    ));
    cases.push(GradCase::new(
        "attention_mix",
        &[A],
        vec![logits, x.clone()],
        projected(g, &[BATCH, SEQ, h], move |t, v| t.attention_mix(&v[0], &v[1], heads)),
    ));

    cases.push(attention_case(g, h, heads, AttentionKind::Softmax));
    cases.push(attention_case(g, h, heads, AttentionKind::NormalizedBandd));

    let up = g.tensor(&[h, inter], 1.0 / (h as f64).sqrt());
    let up_b = g.tensor(&[inter], 0.1);
    let down = g.tensor(&[inter, h], 1.0 / (inter as f64).sqrt());
    let down_b = g.tensor(&[h], 0.1);
    cases.push(GradCase::new(
        "intermediate_unit",
        &[M],
        vec![x, up, up_b, down, down_b, ln_gain, ln_bias],
        projected(g, &[BATCH, SEQ, h], |t, v| {
            let a = t.gelu(&t.add_bias(&t.matmul(&v[0], &v[1])?, &v[2])?);
            let out = t.add_bias(&t.matmul(&a, &v[3])?, &v[4])?;
            let res = t.add(&v[0], &out)?;
            t.layer_norm(&res, &v[5], &v[6], 1e-6)
        }),
    ));
    Ok(cases)
}

/// Runs the cases belonging to `suite` and returns one report per case.
pub fn run_suite(config: &EncoderConfig, suite: OpSuite, opts: &GradCheckOptions) -> Result<Vec<GradCheckReport>> {
    standard_cases(config)?
        .iter()
        .filter(|c| suite == OpSuite::All || c.suites.contains(&suite))
        .map(|c| c.run(opts))
        .collect()
}
