use crate::error::{Error, Result};
use crate::tape::{OpKind, Tape, Var};

use super::SOFTMAX_FLOPS;

impl Tape {
    /// Mean over rows of `-log softmax(logits)[target]` for `logits[B, V]`.
    pub fn cross_entropy_logits(&self, logits: &Var, targets: &[usize]) -> Result<Var> {
        let shape = logits.shape();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(Error::dim(format!("cross_entropy_logits: logits {shape:?} vs {} targets", targets.len())));
        }
        let (rows, vocab) = (shape[0], shape[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
            return Err(Error::Index { index: bad, bound: vocab });
        }
        let mut probs = vec![0.0; rows * vocab];
        let mut loss = 0.0;
        for ((row, p), &t) in logits.data().chunks_exact(vocab).zip(probs.chunks_exact_mut(vocab)).zip(targets) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (pv, &v) in p.iter_mut().zip(row) {
                *pv = (v - max).exp();
                total += *pv;
            }
            p.iter_mut().for_each(|v| *v /= total);
            loss += total.ln() + max - row[t];
        }
        loss /= rows as f64;
        self.count(SOFTMAX_FLOPS * logits.numel() as u64);
        let track = self.tracks(&[logits]);
        let l2 = logits.clone();
        let targets = targets.to_vec();
        Ok(self.push(OpKind::CrossEntropy, Vec::new(), vec![loss], track, move |g, sink| {
            if let Some(dl) = sink.buf(&l2) {
                let scale = g[0] / rows as f64;
                for (r, (d, p)) in dl.chunks_exact_mut(vocab).zip(probs.chunks_exact(vocab)).enumerate() {
                    for (j, (dv, pv)) in d.iter_mut().zip(p).enumerate() {
                        let onehot = if j == targets[r] { 1.0 } else { 0.0 };
                        *dv += scale * (pv - onehot);
                    }
                }
            }
        }))
    }
}
