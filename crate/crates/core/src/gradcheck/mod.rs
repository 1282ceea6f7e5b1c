//! Central finite-difference verification of tape gradients.

mod suite;

pub use suite::{run_suite, standard_cases, GradCase, OpSuite, MAX_HIDDEN};

use crate::error::Result;
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Maximum tolerated relative error.
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator `|analytic| + |numeric|`.
    /// Gradients smaller than this are compared in absolute terms.
    pub floor: f64,
    /// Check at most this many evenly spaced elements per input.
    pub max_elements: Option<usize>,
    /// Corrupt the backward rule of this op (negative control).
    pub fault: Option<OpKind>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-4, floor: 1e-5, max_elements: None, fault: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub checks: Vec<ElementCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    /// Largest relative error; NaN anywhere yields infinity.
    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| if c.rel_error.is_nan() { f64::INFINITY } else { c.rel_error }).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }

    pub fn worst(&self) -> Option<&ElementCheck> {
        self.checks.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    if !analytic.is_finite() || !numeric.is_finite() {
        return f64::NAN;
    }
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

fn sampled(n: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
        _ => (0..n).collect(),
    }
}

/// Compares the tape gradient of the scalar program `f` with respect to
/// every input against central differences.
pub fn grad_check<F>(name: &str, f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = match opts.fault {
        Some(kind) => Tape::new().with_fault(kind),
        None => Tape::new(),
    };
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_requires_grad(true))).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(&out)?;

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let t = Tape::no_grad();
        let vs: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
        let y = f(&t, &vs)?;
        Ok(y.item().unwrap_or(f64::NAN))
    };

    let mut checks = Vec::new();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(v);
        for idx in sampled(inputs[i].numel(), opts.max_elements) {
            let orig = inputs[i].data()[idx];
            work[i].data_mut()[idx] = orig + opts.step;
            let plus = eval(&work)?;
            work[i].data_mut()[idx] = orig - opts.step;
            let minus = eval(&work)?;
            work[i].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.map_or(0.0, |g| g[idx]);
            checks.push(ElementCheck {
                input: i,
                index: idx,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric, opts.floor),
            });
        }
    }
    Ok(GradCheckReport { name: name.to_string(), checks, tolerance: opts.tolerance })
}
