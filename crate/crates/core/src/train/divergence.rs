//! Divergence detection over a trailing window of step records.

use super::runlog::{DivergenceReason, StepRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceThresholds {
    pub grad_norm: f64,
    /// Consecutive steps above `grad_norm` that count as an explosion.
    pub consecutive: usize,
}

impl Default for DivergenceThresholds {
    fn default() -> Self {
        Self { grad_norm: 1e3, consecutive: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Health {
    Healthy,
    Diverged(DivergenceReason),
}

/// Non-finite loss or gradient norm anywhere in `window` is divergence, as
/// is a trailing run of `consecutive` steps with gradient norm above the
/// threshold.
pub fn detect_divergence(window: &[StepRecord], thresholds: &DivergenceThresholds) -> Health {
    if window.iter().any(|r| !r.loss.is_finite() || !r.grad_norm.is_finite() || !r.l2_term.is_finite()) {
        return Health::Diverged(DivergenceReason::NaN);
    }
    let k = thresholds.consecutive.max(1);
    let exploding = window.iter().rev().take_while(|r| r.grad_norm > thresholds.grad_norm).count();
    if exploding >= k {
        return Health::Diverged(DivergenceReason::GradExplosion);
    }
    Health::Healthy
}
