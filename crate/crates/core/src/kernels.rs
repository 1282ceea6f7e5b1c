//! Low-level numeric kernels shared by the tape operations.

/// A strided read-only matrix view into a flat buffer.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> View<'a> {
    pub fn new(data: &'a [f64], offset: usize, row_stride: usize, col_stride: usize) -> Self {
        Self { data, offset, row_stride, col_stride }
    }

    /// Contiguous row-major view.
    pub fn rows(data: &'a [f64], offset: usize, cols: usize) -> Self {
        Self::new(data, offset, cols, 1)
    }

    /// Transpose of a contiguous row-major `rows x cols` block.
    pub fn rows_t(data: &'a [f64], offset: usize, cols: usize) -> Self {
        Self::new(data, offset, 1, cols)
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows == 0 || cols == 0 {
            return;
        }
        let last = self.offset + (rows - 1) * self.row_stride + (cols - 1) * self.col_stride;
        assert!(last < self.data.len(), "strided view out of bounds");
    }
}

/// `c = alpha * a(m x k) * b(k x n) + beta * c`, where `c` is addressed as
/// `(offset, row_stride, col_stride)` inside `out`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: View<'_>,
    b: View<'_>,
    beta: f64,
    out: &mut [f64],
    c_offset: usize,
    c_row_stride: usize,
    c_col_stride: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    a.check(m, k);
    b.check(k, n);
    let last = c_offset + (m - 1) * c_row_stride + (n - 1) * c_col_stride;
    assert!(last < out.len(), "gemm output out of bounds");
    // SAFETY: every address touched by dgemm lies inside the checked extents
    // above, and `out` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr().add(b.offset),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            out.as_mut_ptr().add(c_offset),
            c_row_stride as isize,
            c_col_stride as isize,
        );
    }
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Standard normal CDF.
pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// Standard normal density.
pub(crate) fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Population mean and standard deviation of the selected entries of `row`.
pub(crate) fn masked_moments(row: &[f64], keep: impl Fn(usize) -> bool) -> (f64, f64, usize) {
    let mut n = 0usize;
    let mut sum = 0.0;
    for (j, &v) in row.iter().enumerate() {
        if keep(j) {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = sum / n as f64;
    let mut var = 0.0;
    for (j, &v) in row.iter().enumerate() {
        if keep(j) {
            let d = v - mean;
            var += d * d;
        }
    }
    (mean, (var / n as f64).sqrt(), n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_triple_loop() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm(2, 3, 4, 1.0, View::rows(&a, 0, 3), View::rows(&b, 0, 4), 0.0, &mut c, 0, 4, 1);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|t| a[i * 3 + t] * b[t * 4 + j]).sum();
                assert!((c[i * 4 + j] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gemm_transposed_view() {
        // a is stored 3x2; use its transpose as a 2x3 operand.
        let a = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let b = [1.0, 1.0, 1.0];
        let mut c = vec![0.0; 2];
        gemm(2, 3, 1, 1.0, View::rows_t(&a, 0, 2), View::rows(&b, 0, 1), 0.0, &mut c, 0, 1, 1);
        assert_eq!(c, vec![6.0, 15.0]);
    }

    #[test]
    fn moments_respect_mask() {
        let (m, s, n) = masked_moments(&[1.0, 2.0, 3.0, 100.0], |j| j < 3);
        assert_eq!(n, 3);
        assert!((m - 2.0).abs() < 1e-15);
        assert!((s - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
