use crate::error::{Error, Result};
use crate::kernels::{gemm, View};
use crate::tape::{OpKind, Tape, Var};

fn split(shape: &[usize], heads: usize, what: &str) -> Result<(usize, usize, usize, usize)> {
    if shape.len() != 3 || heads == 0 || !shape[2].is_multiple_of(heads) {
        return Err(Error::dim(format!("{what}: expected [B, S, H] with H divisible by {heads} heads, got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2], shape[2] / heads))
}

impl Tape {
    /// Per-head scaled query-key products.
    ///
    /// `q`, `k` are `[B, S, H]` with head `h` occupying columns
    /// `h*d..(h+1)*d`; the result is `[B, A, S, S]` with
    /// `out[b, h, i, j] = scale * <q[b, i, head h], k[b, j, head h]>`.
    pub fn attention_logits(&self, q: &Var, k: &Var, heads: usize, scale: f64) -> Result<Var> {
        if q.shape() != k.shape() {
            return Err(Error::dim(format!("attention_logits: query {:?} and key {:?} differ", q.shape(), k.shape())));
        }
        let (b, s, h, d) = split(q.shape(), heads, "attention_logits")?;
        let mut out = vec![0.0; b * heads * s * s];
        for bi in 0..b {
            for hi in 0..heads {
                let base = bi * s * h + hi * d;
                let c_off = (bi * heads + hi) * s * s;
                gemm(
                    s,
                    d,
                    s,
                    scale,
                    View::new(q.data(), base, h, 1),
                    View::new(k.data(), base, 1, h),
                    0.0,
                    &mut out,
                    c_off,
                    s,
                    1,
                );
            }
        }
        self.count((2 * b * heads * s * s * d + b * heads * s * s) as u64);
        let track = self.tracks(&[q, k]);
        let (q2, k2) = (q.clone(), k.clone());
        Ok(self.push(OpKind::AttentionLogits, vec![b, heads, s, s], out, track, move |g, sink| {
            if let Some(dq) = sink.buf(&q2) {
                for bi in 0..b {
                    for hi in 0..heads {
                        let base = bi * s * h + hi * d;
                        let g_off = (bi * heads + hi) * s * s;
                        gemm(
                            s,
                            s,
                            d,
                            scale,
                            View::rows(g, g_off, s),
                            View::new(k2.data(), base, h, 1),
                            1.0,
                            dq,
                            base,
                            h,
                            1,
                        );
                    }
                }
            }
            if let Some(dk) = sink.buf(&k2) {
                for bi in 0..b {
                    for hi in 0..heads {
                        let base = bi * s * h + hi * d;
                        let g_off = (bi * heads + hi) * s * s;
                        gemm(
                            s,
                            s,
                            d,
                            scale,
                            View::rows_t(g, g_off, s),
                            View::new(q2.data(), base, h, 1),
                            1.0,
                            dk,
                            base,
                            h,
                            1,
                        );
                    }
                }
            }
        }))
    }

    /// Score-weighted mixing of values: `scores[B, A, S, S]` with
    /// `v[B, S, H]` gives `[B, S, H]`, heads concatenated along the last axis.
    pub fn attention_mix(&self, scores: &Var, v: &Var, heads: usize) -> Result<Var> {
        let (b, s, h, d) = split(v.shape(), heads, "attention_mix")?;
        if scores.shape() != [b, heads, s, s] {
            return Err(Error::dim(format!(
                "attention_mix: scores {:?} do not match values {:?}",
                scores.shape(),
                v.shape()
            )));
        }
        let mut out = vec![0.0; b * s * h];
        for bi in 0..b {
            for hi in 0..heads {
                let base = bi * s * h + hi * d;
                let a_off = (bi * heads + hi) * s * s;
                gemm(
                    s,
                    s,
                    d,
                    1.0,
                    View::rows(scores.data(), a_off, s),
                    View::new(v.data(), base, h, 1),
                    0.0,
                    &mut out,
                    base,
                    h,
                    1,
                );
            }
        }
        self.count((2 * b * heads * s * s * d) as u64);
        let track = self.tracks(&[scores, v]);
        let (a2, v2) = (scores.clone(), v.clone());
        Ok(self.push(OpKind::AttentionMix, vec![b, s, h], out, track, move |g, sink| {
            if let Some(da) = sink.buf(&a2) {
                for bi in 0..b {
                    for hi in 0..heads {
                        let base = bi * s * h + hi * d;
                        let a_off = (bi * heads + hi) * s * s;
                        gemm(
                            s,
                            d,
                            s,
                            1.0,
                            View::new(g, base, h, 1),
                            View::new(v2.data(), base, 1, h),
                            1.0,
                            da,
                            a_off,
                            s,
                            1,
                        );
                    }
                }
            }
            if let Some(dv) = sink.buf(&v2) {
                for bi in 0..b {
                    for hi in 0..heads {
                        let base = bi * s * h + hi * d;
                        let a_off = (bi * heads + hi) * s * s;
                        gemm(
                            s,
                            s,
                            d,
                            1.0,
                            View::rows_t(a2.data(), a_off, s),
                            View::new(g, base, h, 1),
                            1.0,
                            dv,
                            base,
                            h,
                            1,
                        );
                    }
                }
            }
        }))
    }
}
