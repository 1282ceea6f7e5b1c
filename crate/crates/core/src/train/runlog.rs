//! Per-step training records and their CSV form.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const RUNLOG_HEADER: &str = "step,lr,loss,l2_term,grad_norm,wall_ms";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    /// Total objective, including the L2 term.
    pub loss: f64,
    pub l2_term: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceReason {
    NaN,
    GradExplosion,
}

impl fmt::Display for DivergenceReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DivergenceReason::NaN => "nan",
            DivergenceReason::GradExplosion => "grad-explosion",
        })
    }
}

impl FromStr for DivergenceReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nan" => Ok(Self::NaN),
            "grad-explosion" => Ok(Self::GradExplosion),
            other => Err(Error::Input(format!("unknown divergence reason `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    Converged,
    Diverged { step: usize, reason: DivergenceReason },
}

impl RunStatus {
    pub fn is_diverged(&self) -> bool {
        matches!(self, RunStatus::Diverged { .. })
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunStatus::Completed => f.write_str("Completed"),
            RunStatus::Converged => f.write_str("Converged"),
            RunStatus::Diverged { step, reason } => write!(f, "Diverged:{step}:{reason}"),
        }
    }
}

impl FromStr for RunStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Completed" => Ok(Self::Completed),
            "Converged" => Ok(Self::Converged),
            _ => {
                let mut parts = s.splitn(3, ':');
                match (parts.next(), parts.next(), parts.next()) {
                    (Some("Diverged"), Some(step), Some(reason)) => Ok(Self::Diverged {
                        step: step.parse().map_err(|_| Error::Input(format!("bad divergence step `{step}`")))?,
                        reason: reason.parse()?,
                    }),
                    _ => Err(Error::Input(format!("unknown run status `{s}`"))),
                }
            }
        }
    }
}

/// Append-only training history. The status is `None` while the run is
/// still going.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    records: Vec<StepRecord>,
    status: Option<RunStatus>,
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: StepRecord) {
        assert!(self.status.is_none(), "run log is already finished");
        self.records.push(record);
    }

    pub fn finish(&mut self, status: RunStatus) {
        assert!(self.status.is_none(), "run log is already finished");
        self.status = Some(status);
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn status(&self) -> Option<RunStatus> {
        self.status
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    /// Bitwise equality of everything except wall-clock times.
    pub fn same_trajectory(&self, other: &RunLog) -> bool {
        self.status == other.status
            && self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.step == b.step
                    && a.lr.to_bits() == b.lr.to_bits()
                    && a.loss.to_bits() == b.loss.to_bits()
                    && a.l2_term.to_bits() == b.l2_term.to_bits()
                    && a.grad_norm.to_bits() == b.grad_norm.to_bits()
            })
    }

    /// CSV text; floats use the shortest round-tripping representation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(RUNLOG_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{:?},{:?},{:?},{:?},{:.3}\n",
                r.step, r.lr, r.loss, r.l2_term, r.grad_norm, r.wall_ms
            ));
        }
        if let Some(status) = self.status {
            out.push_str(&format!("# status={status}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(RUNLOG_HEADER) {
            return Err(Error::Input("run log does not start with the expected header".into()));
        }
        let mut log = RunLog::new();
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(status) = line.strip_prefix("# status=") {
                log.finish(status.parse()?);
                continue;
            }
            if log.status.is_some() {
                return Err(Error::Input("rows after the status line".into()));
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::Input(format!("run log row `{line}` has {} fields", f.len())));
            }
            let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Input(format!("bad number `{s}`"))) };
            log.records.push(StepRecord {
                step: f[0].parse().map_err(|_| Error::Input(format!("bad step `{}`", f[0])))?,
                lr: num(f[1])?,
                loss: num(f[2])?,
                l2_term: num(f[3])?,
                grad_norm: num(f[4])?,
                wall_ms: num(f[5])?,
            });
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: usize, loss: f64) -> StepRecord {
        StepRecord { step, lr: 1e-4 * step as f64, loss, l2_term: 0.01, grad_norm: 0.5, wall_ms: 12.25 }
    }

    #[test]
    fn csv_round_trip() {
        for status in [
            RunStatus::Completed,
            RunStatus::Converged,
            RunStatus::Diverged { step: 7, reason: DivergenceReason::GradExplosion },
        ] {
            let mut log = RunLog::new();
            log.push(rec(0, 5.5));
            log.push(rec(1, 0.1 + 0.2));
            log.finish(status);
            let text = log.to_csv();
            assert!(text.starts_with("step,lr,loss,l2_term,grad_norm,wall_ms\n"));
            assert!(text.ends_with(&format!("# status={status}\n")));
            let back = RunLog::from_csv(&text).unwrap();
            assert_eq!(back, log);
            assert!(back.same_trajectory(&log));
        }
    }

    #[test]
    fn nan_rows_survive() {
        let mut log = RunLog::new();
        log.push(rec(0, f64::NAN));
        log.finish(RunStatus::Diverged { step: 0, reason: DivergenceReason::NaN });
        let back = RunLog::from_csv(&log.to_csv()).unwrap();
        assert!(back.records()[0].loss.is_nan());
        assert_eq!(back.to_csv().lines().last(), Some("# status=Diverged:0:nan"));
    }

    #[test]
    fn rejects_bad_header() {
        assert!(RunLog::from_csv("a,b\n").is_err());
    }
}
