use crate::error::{Error, Result};
use crate::kernels::masked_moments;
use crate::tape::{OpKind, Tape, Var};

use super::{KeyMask, LAYERNORM_FLOPS, NORMALIZE_FLOPS, SOFTMAX_FLOPS};

/// Per-row standardization state kept for the backward pass.
struct Standardized {
    xhat: Vec<f64>,
    sigma: Vec<f64>,
    denom: Vec<f64>,
    count: Vec<usize>,
}

fn row_batch(mask: Option<(&KeyMask, usize)>, row: usize) -> Option<(&KeyMask, usize)> {
    mask.map(|(m, per)| (m, row / per))
}

fn standardize(x: &[f64], width: usize, eps: f64, mask: Option<(&KeyMask, usize)>) -> Result<Standardized> {
    let rows = x.len() / width;
    let mut st = Standardized {
        xhat: vec![0.0; x.len()],
        sigma: Vec::with_capacity(rows),
        denom: Vec::with_capacity(rows),
        count: Vec::with_capacity(rows),
    };
    for (r, row) in x.chunks_exact(width).enumerate() {
        let valid = row_batch(mask, r).map(|(m, b)| m.row(b));
        let keep = |j: usize| valid.is_none_or(|v| v[j]);
        let (mu, sigma, n) = masked_moments(row, keep);
        if n == 0 {
            return Err(Error::Input(format!("row {r} has no unmasked positions")));
        }
        let denom = sigma + eps;
        let out = &mut st.xhat[r * width..(r + 1) * width];
        for (j, (o, &v)) in out.iter_mut().zip(row).enumerate() {
            if keep(j) {
                *o = (v - mu) / denom;
            }
        }
        st.sigma.push(sigma);
        st.denom.push(denom);
        st.count.push(n);
    }
    Ok(st)
}

/// Accumulates into `dx` the input gradient given `gx`, the gradient with
/// respect to the standardized values (zero at masked positions).
fn standardize_backward(st: &Standardized, gx: &[f64], width: usize, mask: Option<(&KeyMask, usize)>, dx: &mut [f64]) {
    for r in 0..st.sigma.len() {
        let span = r * width..(r + 1) * width;
        let (gx_row, xh_row) = (&gx[span.clone()], &st.xhat[span.clone()]);
        let valid = row_batch(mask, r).map(|(m, b)| m.row(b));
        let keep = |j: usize| valid.is_none_or(|v| v[j]);
        let n = st.count[r] as f64;
        let mut g_sum = 0.0;
        let mut gx_xh = 0.0;
        for j in 0..width {
            if keep(j) {
                g_sum += gx_row[j];
                gx_xh += gx_row[j] * xh_row[j];
            }
        }
        let g_mean = g_sum / n;
        let sigma = st.sigma[r];
        let coupling = if sigma > 0.0 { gx_xh / (n * sigma) } else { 0.0 };
        let inv = 1.0 / st.denom[r];
        for (j, d) in dx[span].iter_mut().enumerate() {
            if keep(j) {
                *d += (gx_row[j] - g_mean) * inv - coupling * xh_row[j];
            }
        }
    }
}

impl Tape {
    /// Softmax along the last axis, shifted by the row max. Masked keys get
    /// exactly zero weight.
    pub fn softmax_rows(&self, x: &Var, mask: Option<&KeyMask>) -> Result<Var> {
        let width = *x.shape().last().unwrap_or(&1);
        let mask = match mask {
            Some(m) => Some((m.clone(), m.rows_per_batch(x.shape())?)),
            None => None,
        };
        let mref = mask.as_ref().map(|(m, p)| (m, *p));
        let mut out = vec![0.0; x.numel()];
        for (r, (row, o)) in x.data().chunks_exact(width).zip(out.chunks_exact_mut(width)).enumerate() {
            let valid = row_batch(mref, r).map(|(m, b)| m.row(b));
            let keep = |j: usize| valid.is_none_or(|v| v[j]);
            let max = (0..width).filter(|&j| keep(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::Input(format!("softmax row {r} has no unmasked keys")));
            }
            let mut total = 0.0;
            for j in 0..width {
                if keep(j) {
                    o[j] = (row[j] - max).exp();
                    total += o[j];
                }
            }
            o.iter_mut().for_each(|v| *v /= total);
        }
        self.count(SOFTMAX_FLOPS * x.numel() as u64);
        let track = self.tracks(&[x]);
        let x2 = x.clone();
        let y = out.clone();
        Ok(self.push(OpKind::Softmax, x.shape().to_vec(), out, track, move |g, sink| {
            if let Some(dx) = sink.buf(&x2) {
                for ((d, gr), yr) in dx.chunks_exact_mut(width).zip(g.chunks_exact(width)).zip(y.chunks_exact(width)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((dv, gv), yv) in d.iter_mut().zip(gr).zip(yr) {
                        *dv += yv * (gv - dot);
                    }
                }
            }
        }))
    }

    /// Row standardization with learned affine, `g * (x - mu) / (sigma + eps) + b`.
    ///
    /// Statistics are population moments over the unmasked entries of each
    /// row; masked entries output zero. `gain` and `bias` are either
    /// single-element (one pair for every row) or length `G` where the input
    /// is `[..., G, R, N]`, giving one pair per group (attention head).
    pub fn normalize_rows(&self, x: &Var, gain: &Var, bias: &Var, eps: f64, mask: Option<&KeyMask>) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
        }
        let shape = x.shape().to_vec();
        let width = *shape.last().unwrap_or(&1);
        let groups = gain.numel();
        if bias.numel() != groups {
            return Err(Error::dim(format!(
                "normalize_rows: gain {:?} and bias {:?} differ",
                gain.shape(),
                bias.shape()
            )));
        }
        let rows_per_group = if groups == 1 {
            x.numel() / width
        } else {
            let nd = shape.len();
            if nd < 3 || shape[nd - 3] != groups {
                return Err(Error::dim(format!("normalize_rows: {groups} gain groups do not match input {shape:?}")));
            }
            shape[nd - 2]
        };
        let group_of = move |r: usize| if groups == 1 { 0 } else { (r / rows_per_group) % groups };
        let mask = match mask {
            Some(m) => Some((m.clone(), m.rows_per_batch(&shape)?)),
            None => None,
        };
        let st = standardize(x.data(), width, eps, mask.as_ref().map(|(m, p)| (m, *p)))?;
        let mut out = vec![0.0; x.numel()];
        let (gd, bd) = (gain.data(), bias.data());
        for (r, (o, xh)) in out.chunks_exact_mut(width).zip(st.xhat.chunks_exact(width)).enumerate() {
            let grp = group_of(r);
            let valid = mask.as_ref().map(|(m, p)| m.row(r / p));
            for j in 0..width {
                if valid.is_none_or(|v| v[j]) {
                    o[j] = gd[grp] * xh[j] + bd[grp];
                }
            }
        }
        self.count(NORMALIZE_FLOPS * x.numel() as u64);
        let track = self.tracks(&[x, gain, bias]);
        let (x2, g2, b2) = (x.clone(), gain.clone(), bias.clone());
        Ok(self.push(OpKind::Normalize, shape, out, track, move |g, sink| {
            let mref = mask.as_ref().map(|(m, p)| (m, *p));
            let keep = |r: usize, j: usize| mref.is_none_or(|(m, p)| m.is_valid(r / p, j));
            if g2.requires_grad() || b2.requires_grad() {
                let mut dg = vec![0.0; groups];
                let mut db = vec![0.0; groups];
                for (r, (gr, xh)) in g.chunks_exact(width).zip(st.xhat.chunks_exact(width)).enumerate() {
                    let grp = group_of(r);
                    for j in 0..width {
                        if keep(r, j) {
                            dg[grp] += gr[j] * xh[j];
                            db[grp] += gr[j];
                        }
                    }
                }
                sink.add(&g2, &dg);
                sink.add(&b2, &db);
            }
            if x2.requires_grad() {
                let gd = g2.data();
                let mut gx = vec![0.0; g.len()];
                for (r, (gxr, gr)) in gx.chunks_exact_mut(width).zip(g.chunks_exact(width)).enumerate() {
                    let scale = gd[group_of(r)];
                    for j in 0..width {
                        if keep(r, j) {
                            gxr[j] = gr[j] * scale;
                        }
                    }
                }
                if let Some(dx) = sink.buf(&x2) {
                    standardize_backward(&st, &gx, width, mref, dx);
                }
            }
        }))
    }

    /// Layer normalization over the last axis with per-feature gain and bias.
    pub fn layer_norm(&self, x: &Var, gain: &Var, bias: &Var, eps: f64) -> Result<Var> {
        let width = *x.shape().last().unwrap_or(&1);
        if gain.shape() != [width] || bias.shape() != [width] {
            return Err(Error::dim(format!(
                "layer_norm: gain {:?} / bias {:?} must both be [{width}] for input {:?}",
                gain.shape(),
                bias.shape(),
                x.shape()
            )));
        }
        if eps <= 0.0 {
            return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
        }
        let st = standardize(x.data(), width, eps, None)?;
        let (gd, bd) = (gain.data(), bias.data());
        let out: Vec<f64> =
            st.xhat.chunks_exact(width).flat_map(|xh| xh.iter().zip(gd).zip(bd).map(|((v, g), b)| g * v + b)).collect();
        self.count(LAYERNORM_FLOPS * x.numel() as u64);
        let track = self.tracks(&[x, gain, bias]);
        let (x2, g2, b2) = (x.clone(), gain.clone(), bias.clone());
        Ok(self.push(OpKind::LayerNorm, x.shape().to_vec(), out, track, move |g, sink| {
            if let Some(dg) = sink.buf(&g2) {
                for (gr, xh) in g.chunks_exact(width).zip(st.xhat.chunks_exact(width)) {
                    for j in 0..width {
                        dg[j] += gr[j] * xh[j];
                    }
                }
            }
            if let Some(db) = sink.buf(&b2) {
                for gr in g.chunks_exact(width) {
                    db.iter_mut().zip(gr).for_each(|(d, v)| *d += v);
                }
            }
            if x2.requires_grad() {
                let gd = g2.data();
                let gx: Vec<f64> = g.chunks_exact(width).flat_map(|gr| gr.iter().zip(gd).map(|(a, b)| a * b)).collect();
                if let Some(dx) = sink.buf(&x2) {
                    standardize_backward(&st, &gx, width, None, dx);
                }
            }
        }))
    }
}
