use crate::error::{Error, Result};
use crate::kernels::{gemm, View};
use crate::tape::{OpKind, Tape, Var};

use super::{numel, same_shape};

impl Tape {
    /// `a[..., p, q] x b[q, r] -> [..., p, r]`.
    pub fn matmul(&self, a: &Var, b: &Var) -> Result<Var> {
        let (ash, bsh) = (a.shape(), b.shape());
        if ash.is_empty() || bsh.len() != 2 || ash[ash.len() - 1] != bsh[0] {
            return Err(Error::dim(format!("matmul: cannot multiply {ash:?} by {bsh:?}")));
        }
        let q = bsh[0];
        let r = bsh[1];
        let m = a.numel() / q;
        let mut out = vec![0.0; m * r];
        gemm(m, q, r, 1.0, View::rows(a.data(), 0, q), View::rows(b.data(), 0, r), 0.0, &mut out, 0, r, 1);
        self.count(2 * (m * q * r) as u64);
        let mut shape = ash.to_vec();
        *shape.last_mut().unwrap() = r;
        let track = self.tracks(&[a, b]);
        let (a2, b2) = (a.clone(), b.clone());
        Ok(self.push(OpKind::MatMul, shape, out, track, move |g, sink| {
            if let Some(da) = sink.buf(&a2) {
                gemm(m, r, q, 1.0, View::rows(g, 0, r), View::rows_t(b2.data(), 0, r), 1.0, da, 0, q, 1);
            }
            if let Some(db) = sink.buf(&b2) {
                gemm(q, m, r, 1.0, View::rows_t(a2.data(), 0, q), View::rows(g, 0, r), 1.0, db, 0, r, 1);
            }
        }))
    }

    pub fn add(&self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("add", a.shape(), b.shape())?;
        let out = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        self.count(a.numel() as u64);
        let track = self.tracks(&[a, b]);
        let (a2, b2) = (a.clone(), b.clone());
        Ok(self.push(OpKind::Add, a.shape().to_vec(), out, track, move |g, sink| {
            sink.add(&a2, g);
            sink.add(&b2, g);
        }))
    }

    /// Adds a vector along the last axis: `a[..., r] + b[r]`.
    pub fn add_bias(&self, a: &Var, b: &Var) -> Result<Var> {
        let r = *a.shape().last().unwrap_or(&1);
        if b.shape() != [r] {
            return Err(Error::dim(format!(
                "add_bias: bias {:?} does not match last axis of {:?}",
                b.shape(),
                a.shape()
            )));
        }
        let bias = b.data();
        let out: Vec<f64> = a.data().chunks_exact(r).flat_map(|row| row.iter().zip(bias).map(|(x, y)| x + y)).collect();
        self.count(a.numel() as u64);
        let track = self.tracks(&[a, b]);
        let (a2, b2) = (a.clone(), b.clone());
        Ok(self.push(OpKind::AddBias, a.shape().to_vec(), out, track, move |g, sink| {
            sink.add(&a2, g);
            if let Some(db) = sink.buf(&b2) {
                for row in g.chunks_exact(r) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
            }
        }))
    }

    /// Elementwise product.
    pub fn mul(&self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("mul", a.shape(), b.shape())?;
        let out = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        self.count(a.numel() as u64);
        let track = self.tracks(&[a, b]);
        let (a2, b2) = (a.clone(), b.clone());
        Ok(self.push(OpKind::Mul, a.shape().to_vec(), out, track, move |g, sink| {
            if let Some(da) = sink.buf(&a2) {
                for ((d, gv), bv) in da.iter_mut().zip(g).zip(b2.data()) {
                    *d += gv * bv;
                }
            }
            if let Some(db) = sink.buf(&b2) {
                for ((d, gv), av) in db.iter_mut().zip(g).zip(a2.data()) {
                    *d += gv * av;
                }
            }
        }))
    }

    /// Multiplies by a constant.
    pub fn scale(&self, a: &Var, c: f64) -> Var {
        let out = a.data().iter().map(|x| x * c).collect();
        self.count(a.numel() as u64);
        let track = self.tracks(&[a]);
        let a2 = a.clone();
        self.push(OpKind::Scale, a.shape().to_vec(), out, track, move |g, sink| {
            if let Some(da) = sink.buf(&a2) {
                da.iter_mut().zip(g).for_each(|(d, v)| *d += c * v);
            }
        })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self, a: &Var) -> Var {
        let s = a.data().iter().sum();
        self.count(a.numel() as u64);
        let track = self.tracks(&[a]);
        let a2 = a.clone();
        self.push(OpKind::Sum, Vec::new(), vec![s], track, move |g, sink| {
            if let Some(da) = sink.buf(&a2) {
                da.iter_mut().for_each(|d| *d += g[0]);
            }
        })
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&self, a: &Var) -> Var {
        let s = self.sum(a);
        self.scale(&s, 1.0 / a.numel() as f64)
    }

    /// Sum of squared elements, as a scalar.
    pub fn sum_squares(&self, a: &Var) -> Var {
        let s = a.data().iter().map(|x| x * x).sum();
        self.count(2 * a.numel() as u64);
        let track = self.tracks(&[a]);
        let a2 = a.clone();
        self.push(OpKind::SumSquares, Vec::new(), vec![s], track, move |g, sink| {
            if let Some(da) = sink.buf(&a2) {
                for (d, x) in da.iter_mut().zip(a2.data()) {
                    *d += 2.0 * x * g[0];
                }
            }
        })
    }

    pub fn reshape(&self, a: &Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != a.numel() || shape.contains(&0) {
            return Err(Error::dim(format!("reshape: {:?} cannot become {shape:?}", a.shape())));
        }
        let track = self.tracks(&[a]);
        let a2 = a.clone();
        Ok(self.push(OpKind::Reshape, shape.to_vec(), a.data().to_vec(), track, move |g, sink| {
            sink.add(&a2, g);
        }))
    }

    /// Selects rows of `table` (viewed as `[rows, last_dim]`), giving
    /// `[indices.len(), last_dim]`. Also serves as embedding lookup.
    pub fn gather_rows(&self, table: &Var, indices: &[usize]) -> Result<Var> {
        let width = *table.shape().last().unwrap_or(&1);
        let rows = table.numel() / width;
        if indices.is_empty() {
            return Err(Error::Input("gather_rows: no indices".into()));
        }
        let mut out = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            if i >= rows {
                return Err(Error::Index { index: i, bound: rows });
            }
            out.extend_from_slice(&table.data()[i * width..(i + 1) * width]);
        }
        let track = self.tracks(&[table]);
        let t2 = table.clone();
        let idx = indices.to_vec();
        Ok(self.push(OpKind::Gather, vec![indices.len(), width], out, track, move |g, sink| {
            if let Some(dt) = sink.buf(&t2) {
                for (row, &i) in g.chunks_exact(width).zip(&idx) {
                    dt[i * width..(i + 1) * width].iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
            }
        }))
    }
}
