use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::{read, KvRecord};

use super::data::TaskKind;

/// Optimizer and schedule settings for a toy training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    /// Coefficient of the squared-weight penalty added to the loss.
    pub l2_lambda: f64,
    /// Penalty target; only `weights` is implemented.
    pub l2_mode: L2Mode,
    /// Apply the penalty to every variant, not only normalized attention.
    pub l2_all_variants: bool,
    /// Refuse normalized-attention runs with `l2_lambda == 0`.
    pub require_l2_for_bandd: bool,
    pub mask_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub grad_norm_threshold: f64,
    pub divergence_window: usize,
    pub task: TaskKind,
    pub branching: usize,
    pub train_sequences: usize,
    pub eval_sequences: usize,
    /// Stop early with `Converged` once eval loss reaches this value.
    pub target_eval_loss: Option<f64>,
    /// Eval cadence used for `target_eval_loss`; 0 disables periodic eval.
    pub eval_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum L2Mode {
    Weights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 3e-3,
            warmup_steps: 200,
            total_steps: 2000,
            batch_size: 16,
            seq_len: 32,
            l2_lambda: 0.01,
            l2_mode: L2Mode::Weights,
            l2_all_variants: false,
            require_l2_for_bandd: true,
            mask_fraction: 0.15,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            grad_norm_threshold: 1e3,
            divergence_window: 5,
            task: TaskKind::Markov,
            branching: 2,
            train_sequences: 4096,
            eval_sequences: 256,
            target_eval_loss: None,
            eval_every: 0,
        }
    }
}

const KEYS: [&str; 22] = [
    "peak_lr",
    "warmup_steps",
    "total_steps",
    "batch_size",
    "seq_len",
    "l2_lambda",
    "l2_mode",
    "l2_all_variants",
    "require_l2_for_bandd",
    "mask_fraction",
    "optimizer",
    "beta1",
    "beta2",
    "adam_eps",
    "seed",
    "grad_norm_threshold",
    "divergence_window",
    "task",
    "branching",
    "train_sequences",
    "eval_sequences",
    "target_eval_loss",
];

impl TrainConfig {
    /// Full-scale schedule shape: 10K warmup steps to 1e-4 over 900K steps.
    pub fn full_scale() -> Self {
        Self {
            peak_lr: 1e-4,
            warmup_steps: 10_000,
            total_steps: 900_000,
            batch_size: 256,
            seq_len: 128,
            ..Self::default()
        }
    }

    /// Learning rate for `step` under this run's schedule.
    pub fn lr_at(&self, step: usize) -> f64 {
        super::schedule::lr_schedule(step, self.warmup_steps, self.total_steps, self.peak_lr)
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps > self.total_steps {
            return Err(Error::config("warmup_steps", "must not exceed total_steps"));
        }
        if !(0.0..1.0).contains(&self.mask_fraction) {
            return Err(Error::config("mask_fraction", "must be in [0, 1)"));
        }
        if !(self.l2_lambda >= 0.0) {
            return Err(Error::config("l2_lambda", "must be non-negative"));
        }
        if !(self.peak_lr >= 0.0) {
            return Err(Error::config("peak_lr", "must be non-negative"));
        }
        for (key, v) in [
            ("batch_size", self.batch_size),
            ("seq_len", self.seq_len),
            ("divergence_window", self.divergence_window),
            ("train_sequences", self.train_sequences),
            ("eval_sequences", self.eval_sequences),
            ("branching", self.branching),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.seq_len < 2 {
            return Err(Error::config("seq_len", "needs room for a leading token and one more"));
        }
        Ok(())
    }

    pub fn from_kv(rec: &KvRecord) -> Result<Self> {
        let mut known = KEYS.to_vec();
        known.push("eval_every");
        rec.reject_unknown(&known)?;
        let mut c = Self::default();
        read(rec, "peak_lr", &mut c.peak_lr)?;
        read(rec, "warmup_steps", &mut c.warmup_steps)?;
        read(rec, "total_steps", &mut c.total_steps)?;
        read(rec, "batch_size", &mut c.batch_size)?;
        read(rec, "seq_len", &mut c.seq_len)?;
        read(rec, "l2_lambda", &mut c.l2_lambda)?;
        if let Some(v) = rec.get("l2_mode") {
            if v != "weights" {
                return Err(Error::config("l2_mode", format!("only `weights` is supported, got `{v}`")));
            }
        }
        read(rec, "l2_all_variants", &mut c.l2_all_variants)?;
        read(rec, "require_l2_for_bandd", &mut c.require_l2_for_bandd)?;
        read(rec, "mask_fraction", &mut c.mask_fraction)?;
        if let Some(v) = rec.get("optimizer") {
            if v != "adam" {
                return Err(Error::config("optimizer", format!("only `adam` is supported, got `{v}`")));
            }
        }
        read(rec, "beta1", &mut c.beta1)?;
        read(rec, "beta2", &mut c.beta2)?;
        read(rec, "adam_eps", &mut c.adam_eps)?;
        read(rec, "seed", &mut c.seed)?;
        read(rec, "grad_norm_threshold", &mut c.grad_norm_threshold)?;
        read(rec, "divergence_window", &mut c.divergence_window)?;
        if let Some(v) = rec.get("task") {
            c.task = v.parse()?;
        }
        read(rec, "branching", &mut c.branching)?;
        read(rec, "train_sequences", &mut c.train_sequences)?;
        read(rec, "eval_sequences", &mut c.eval_sequences)?;
        if let Some(v) = rec.get("target_eval_loss") {
            c.target_eval_loss =
                Some(v.parse().map_err(|_| Error::config("target_eval_loss", format!("cannot parse `{v}`")))?);
        }
        read(rec, "eval_every", &mut c.eval_every)?;
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KvRecord::parse(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_kv(&self) -> KvRecord {
        let mut r = KvRecord::default();
        r.push("peak_lr", self.peak_lr);
        r.push("warmup_steps", self.warmup_steps);
        r.push("total_steps", self.total_steps);
        r.push("batch_size", self.batch_size);
        r.push("seq_len", self.seq_len);
        r.push("l2_lambda", self.l2_lambda);
        r.push("l2_mode", "weights");
        r.push("l2_all_variants", self.l2_all_variants);
        r.push("require_l2_for_bandd", self.require_l2_for_bandd);
        r.push("mask_fraction", self.mask_fraction);
        r.push("optimizer", "adam");
        r.push("beta1", self.beta1);
        r.push("beta2", self.beta2);
        r.push("adam_eps", self.adam_eps);
        r.push("seed", self.seed);
        r.push("grad_norm_threshold", self.grad_norm_threshold);
        r.push("divergence_window", self.divergence_window);
        r.push("task", self.task);
        r.push("branching", self.branching);
        r.push("train_sequences", self.train_sequences);
        r.push("eval_sequences", self.eval_sequences);
        if let Some(t) = self.target_eval_loss {
            r.push("target_eval_loss", t);
        }
        r.push("eval_every", self.eval_every);
        r
    }

    pub fn to_text(&self) -> String {
        self.to_kv().to_text()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let c = TrainConfig { target_eval_loss: Some(1.5), task: TaskKind::CopyWithNoise, ..TrainConfig::default() };
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn invariants() {
        assert!(TrainConfig::parse("warmup_steps = 10\ntotal_steps = 5").is_err());
        assert!(TrainConfig::parse("mask_fraction = 1.0").is_err());
        assert!(TrainConfig::parse("l2_lambda = -1").is_err());
        assert!(TrainConfig::parse("optimizer = sgd").is_err());
        assert!(TrainConfig::parse("l2_mode = activations").is_err());
        assert!(TrainConfig::parse("bogus = 1").unwrap_err().to_string().contains("`bogus`"));
        TrainConfig::full_scale().validate().unwrap();
    }
}
