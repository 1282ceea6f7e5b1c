use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::{normal_cdf, normal_pdf};
use crate::tape::{OpKind, Tape, Var};

use super::GELU_FLOPS;

impl Tape {
    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&self, x: &Var) -> Var {
        let out = x.data().iter().map(|&v| v * normal_cdf(v)).collect();
        self.count(GELU_FLOPS * x.numel() as u64);
        let track = self.tracks(&[x]);
        let x2 = x.clone();
        self.push(OpKind::Gelu, x.shape().to_vec(), out, track, move |g, sink| {
            if let Some(dx) = sink.buf(&x2) {
                for ((d, gv), &v) in dx.iter_mut().zip(g).zip(x2.data()) {
                    *d += gv * (normal_cdf(v) + v * normal_pdf(v));
                }
            }
        })
    }

    pub fn tanh(&self, x: &Var) -> Var {
        let out: Vec<f64> = x.data().iter().map(|v| v.tanh()).collect();
        self.count(x.numel() as u64);
        let track = self.tracks(&[x]);
        let x2 = x.clone();
        let y = out.clone();
        self.push(OpKind::Tanh, x.shape().to_vec(), out, track, move |g, sink| {
            if let Some(dx) = sink.buf(&x2) {
                for ((d, gv), yv) in dx.iter_mut().zip(g).zip(&y) {
                    *d += gv * (1.0 - yv * yv);
                }
            }
        })
    }

    /// Inverted dropout. In eval mode, or with `rate == 0`, this is the
    /// identity and returns `x` itself.
    pub fn dropout<R: Rng + ?Sized>(&self, x: &Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        if !training || rate == 0.0 {
            return Ok(x.clone());
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..x.numel()).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep_scale }).collect();
        let out = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.count(x.numel() as u64);
        let track = self.tracks(&[x]);
        let x2 = x.clone();
        Ok(self.push(OpKind::Dropout, x.shape().to_vec(), out, track, move |g, sink| {
            if let Some(dx) = sink.buf(&x2) {
                for ((d, gv), m) in dx.iter_mut().zip(g).zip(&mask) {
                    *d += gv * m;
                }
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::tape::Tape;
    use crate::tensor::Tensor;

    /// Phi(x) by composite Simpson quadrature of the Gaussian density,
    /// independent of the erf used by the op.
    fn phi_quadrature(x: f64) -> f64 {
        let density = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let (a, n) = (0.0, 20_000);
        let h = (x - a) / n as f64;
        let mut s = density(a) + density(x);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * density(a + i as f64 * h);
        }
        0.5 + s * h / 3.0
    }

    #[test]
    fn gelu_reference_values() {
        let tape = Tape::no_grad();
        let x = tape.constant(&[3], vec![0.0, 1.0, -10.0]).unwrap();
        let y = tape.gelu(&x);
        assert_eq!(y.data()[0], 0.0);
        let want = phi_quadrature(1.0);
        assert!((want - 0.841345).abs() < 1e-6);
        assert!((y.data()[1] - want).abs() < 1e-12);
        assert!(y.data()[2].abs() < 1e-8);
    }

    #[test]
    fn dropout_identity_cases() {
        let tape = Tape::no_grad();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = tape.leaf(Tensor::full(&[16], 2.0));
        assert_eq!(tape.dropout(&x, 0.0, true, &mut rng).unwrap().data(), x.data());
        assert_eq!(tape.dropout(&x, 0.9, false, &mut rng).unwrap().data(), x.data());
        assert!(tape.dropout(&x, 1.0, true, &mut rng).is_err());
        assert!(tape.dropout(&x, -0.1, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_mean_and_rate() {
        let tape = Tape::no_grad();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000;
        let x = tape.leaf(Tensor::ones(&[n]));
        let y = tape.dropout(&x, 0.5, true, &mut rng).unwrap();
        // counting oracle
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count();
        let survivors = n - zeros;
        let mean = survivors as f64 * 2.0 / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        let sigma = (0.25 / n as f64).sqrt();
        assert!((zeros as f64 / n as f64 - 0.5).abs() < 3.0 * sigma);
        assert_eq!(y.data().iter().sum::<f64>(), mean * n as f64);
    }

    #[test]
    fn dropout_is_deterministic_per_seed() {
        let tape = Tape::no_grad();
        let x = tape.leaf(Tensor::ones(&[256]));
        let a = tape.dropout(&x, 0.3, true, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = tape.dropout(&x, 0.3, true, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
