use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slimbert::attention::{scores_normalized, scores_softmax};
use slimbert::*;

const TOL: f64 = 1e-9;
/// Small enough that the stabilizer is invisible at 1e-9 for logits with
/// standard deviation of order one.
const TINY_EPS: f64 = 1e-14;

#[derive(Debug, Clone)]
struct Case {
    batch: usize,
    heads: usize,
    seq: usize,
    lengths: Vec<usize>,
    logits: Vec<f64>,
    gain: Vec<f64>,
    bias: Vec<f64>,
}

fn case() -> impl Strategy<Value = Case> {
    (1usize..4, 1usize..5, 2usize..10, any::<u64>()).prop_map(|(batch, heads, seq, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lengths = (0..batch).map(|_| rng.gen_range(2..=seq)).collect();
        let logits = (0..batch * heads * seq * seq).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let gain = (0..heads).map(|_| rng.gen_range(0.2..3.0)).collect();
        let bias = (0..heads).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Case { batch, heads, seq, lengths, logits, gain, bias }
    })
}

impl Case {
    fn shape(&self) -> Vec<usize> {
        vec![self.batch, self.heads, self.seq, self.seq]
    }

    fn mask(&self) -> KeyMask {
        KeyMask::from_lengths(self.seq, &self.lengths).unwrap()
    }

    fn normalized(&self, logits: &[f64], eps: f64) -> Vec<f64> {
        let tape = Tape::no_grad();
        let x = tape.constant(&self.shape(), logits.to_vec()).unwrap();
        let g = tape.constant(&[self.heads], self.gain.clone()).unwrap();
        let b = tape.constant(&[self.heads], self.bias.clone()).unwrap();
        scores_normalized(&tape, &x, &self.mask(), &g, &b, eps).unwrap().data().to_vec()
    }

    /// `(batch, head, valid keys, row)` for every score row.
    fn rows<'a>(&'a self, data: &'a [f64]) -> impl Iterator<Item = (usize, usize, usize, &'a [f64])> + 'a {
        data.chunks_exact(self.seq).enumerate().map(move |(r, row)| {
            let b = r / (self.heads * self.seq);
            let h = (r / self.seq) % self.heads;
            (b, h, self.lengths[b], row)
        })
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_rows_sum_to_one_over_valid_keys(c in case()) {
        let tape = Tape::no_grad();
        let x = tape.constant(&c.shape(), c.logits.clone()).unwrap();
        let s = scores_softmax(&tape, &x, &c.mask()).unwrap();
        for (_, _, valid, row) in c.rows(s.data()) {
            let total: f64 = row[..valid].iter().sum();
            prop_assert!((total - 1.0).abs() <= TOL, "row sums to {}", total);
            prop_assert!(row[valid..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn normalized_rows_have_mean_bias(c in case()) {
        let s = c.normalized(&c.logits, 1e-6);
        for (_, h, valid, row) in c.rows(&s) {
            let mean = row[..valid].iter().sum::<f64>() / valid as f64;
            prop_assert!((mean - c.bias[h]).abs() <= TOL, "mean {} vs bias {}", mean, c.bias[h]);
            prop_assert!(row[valid..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn normalized_scores_ignore_positive_affine_maps(c in case(), a in 0.05f64..20.0, shift in -50.0f64..50.0) {
        let moved: Vec<f64> = c.logits.iter().map(|v| a * v + shift).collect();
        let before = c.normalized(&c.logits, TINY_EPS);
        let after = c.normalized(&moved, TINY_EPS);
        for (x, y) in before.iter().zip(&after) {
            prop_assert!((x - y).abs() <= TOL, "{} vs {}", x, y);
        }
    }

    #[test]
    fn padding_does_not_change_valid_outputs(c in case()) {
        // The same rows with extra masked keys appended behave identically.
        let wider = Case {
            seq: c.seq + 3,
            logits: Vec::new(),
            ..c.clone()
        };
        let mut logits = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for row in 0..c.batch * c.heads {
            for q in 0..wider.seq {
                for k in 0..wider.seq {
                    let v = if q < c.seq && k < c.seq { c.logits[(row * c.seq + q) * c.seq + k] } else { rng.gen_range(-9.0..9.0) };
                    logits.push(v);
                }
            }
        }
        let wider = Case { logits, ..wider };
        let narrow = c.normalized(&c.logits, 1e-6);
        let wide = wider.normalized(&wider.logits, 1e-6);
        for row in 0..c.batch * c.heads {
            for q in 0..c.seq {
                for k in 0..c.seq {
                    let a = narrow[(row * c.seq + q) * c.seq + k];
                    let b = wide[(row * wider.seq + q) * wider.seq + k];
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }
}

#[test]
fn default_eps_invariance_is_bounded_by_eps_over_sigma() {
    // With the model's stabilizer the map is invariant up to about eps / sigma.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c = Case {
        batch: 1,
        heads: 2,
        seq: 8,
        lengths: vec![8],
        logits: (0..128).map(|_| rng.gen_range(-4.0..4.0)).collect(),
        gain: vec![1.0, 2.0],
        bias: vec![0.0, 0.5],
    };
    let moved: Vec<f64> = c.logits.iter().map(|v| 3.0 * v + 1.0).collect();
    let a = c.normalized(&c.logits, 1e-6);
    let b = c.normalized(&moved, 1e-6);
    let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-5, "{worst}");
}

/// The normalized path with and without the `1/sqrt(d)` logit scale gives
/// the same unit output.
#[test]
fn inverse_sqrt_scaling_is_inert_for_normalized_attention() {
    let config = EncoderConfig::toy().with_bandd();
    let stack = build_stack(&config, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (b, s, h, heads) = (2, 7, config.hidden_size, config.num_heads);
    let x_data: Vec<f64> = (0..b * s * h).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mask = KeyMask::from_lengths(s, &[7, 4]).unwrap();
    let tape = Tape::no_grad();
    let x = tape.constant(&[b, s, h], x_data).unwrap();
    let w = stack.blocks()[0].attention.bind(stack.params(), &tape);
    let q = w.query.apply(&tape, &x).unwrap();
    let k = w.key.apply(&tape, &x).unwrap();
    let d = (h / heads) as f64;
    let (g, bias) = (w.score_gain.clone().unwrap(), w.score_bias.clone().unwrap());
    for scale in [1.0, 1.0 / d.sqrt()] {
        let logits = tape.attention_logits(&q, &k, heads, scale).unwrap();
        let scores = scores_normalized(&tape, &logits, &mask, &g, &bias, TINY_EPS).unwrap();
        let reference = {
            let l = tape.attention_logits(&q, &k, heads, 1.0).unwrap();
            scores_normalized(&tape, &l, &mask, &g, &bias, TINY_EPS).unwrap()
        };
        for (u, v) in scores.data().iter().zip(reference.data()) {
            assert!((u - v).abs() <= TOL, "scale {scale}: {u} vs {v}");
        }
    }
}

#[test]
fn softmax_path_depends_on_scaling() {
    // Control: the same experiment moves softmax scores.
    let tape = Tape::no_grad();
    let x = tape.constant(&[1, 1, 2, 3], vec![1.0, 2.0, 3.0, 0.0, -1.0, 4.0]).unwrap();
    let halved = tape.scale(&x, 0.5);
    let mask = KeyMask::all(1, 3);
    let a = scores_softmax(&tape, &x, &mask).unwrap();
    let b = scores_softmax(&tape, &halved, &mask).unwrap();
    assert!(a.data().iter().zip(b.data()).any(|(u, v)| (u - v).abs() > 1e-3));
}
