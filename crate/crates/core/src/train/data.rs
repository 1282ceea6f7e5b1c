//! Deterministic synthetic corpora standing in for natural-language text.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const MASK: usize = 2;
/// First id that is an ordinary token.
pub const FIRST_REGULAR: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Sparse random Markov chain over the regular tokens.
    Markov,
    /// First half random, second half a noisy copy of the first.
    CopyWithNoise,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Markov => "markov",
            TaskKind::CopyWithNoise => "copy_with_noise",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markov" => Ok(TaskKind::Markov),
            "copy_with_noise" => Ok(TaskKind::CopyWithNoise),
            other => Err(Error::config("task", format!("unknown task `{other}`"))),
        }
    }
}

/// Description of a synthetic sequence corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub vocab_size: usize,
    pub seq_len: usize,
    /// Successors per state (Markov) and seed of the transition table.
    pub branching: usize,
    pub transition_seed: u64,
    pub train_size: usize,
    pub eval_size: usize,
}

/// Generated train and eval splits; every sequence starts with [`CLS`].
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<Vec<usize>>,
    pub eval: Vec<Vec<usize>>,
}

struct MarkovChain {
    successors: Vec<Vec<(usize, f64)>>,
}

impl MarkovChain {
    fn new(vocab: usize, branching: usize, rng: &mut ChaCha8Rng) -> Self {
        let regular: Vec<usize> = (FIRST_REGULAR..vocab).collect();
        let successors = regular
            .iter()
            .map(|_| {
                let picks: Vec<usize> = regular.choose_multiple(rng, branching.min(regular.len())).copied().collect();
                let weights: Vec<f64> = picks.iter().map(|_| rng.gen_range(0.1..1.0)).collect();
                let total: f64 = weights.iter().sum();
                picks.into_iter().zip(weights.into_iter().map(|w| w / total)).collect()
            })
            .collect();
        Self { successors }
    }

    fn next(&self, state: usize, rng: &mut ChaCha8Rng) -> usize {
        let options = &self.successors[state - FIRST_REGULAR];
        let mut u: f64 = rng.gen();
        for &(tok, p) in options {
            if u < p {
                return tok;
            }
            u -= p;
        }
        options.last().expect("at least one successor").0
    }
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < FIRST_REGULAR + 2 {
            return Err(Error::config("vocab_size", "synthetic tasks need at least two regular tokens"));
        }
        if self.seq_len < 2 {
            return Err(Error::config("seq_len", "must be at least 2"));
        }
        if self.train_size == 0 || self.eval_size == 0 {
            return Err(Error::config("train_sequences", "splits must be non-empty"));
        }
        Ok(())
    }

    /// Builds both splits; eval sequences never occur in train.
    pub fn generate(&self) -> Result<Corpus> {
        self.validate()?;
        let mut table_rng = ChaCha8Rng::seed_from_u64(self.transition_seed);
        let chain = MarkovChain::new(self.vocab_size, self.branching, &mut table_rng);
        let mut train_rng = ChaCha8Rng::seed_from_u64(self.transition_seed);
        train_rng.set_stream(1);
        let mut eval_rng = ChaCha8Rng::seed_from_u64(self.transition_seed);
        eval_rng.set_stream(2);

        let train: Vec<Vec<usize>> = (0..self.train_size).map(|_| self.sample(&chain, &mut train_rng)).collect();
        let seen: HashSet<&Vec<usize>> = train.iter().collect();
        let mut eval = Vec::with_capacity(self.eval_size);
        let mut attempts = 0;
        while eval.len() < self.eval_size {
            let s = self.sample(&chain, &mut eval_rng);
            attempts += 1;
            if attempts > 100 * self.eval_size {
                return Err(Error::Input("cannot draw an eval split disjoint from train".into()));
            }
            if !seen.contains(&s) {
                eval.push(s);
            }
        }
        Ok(Corpus { train, eval })
    }

    fn sample(&self, chain: &MarkovChain, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let len = self.seq_len;
        let mut seq = Vec::with_capacity(len);
        seq.push(CLS);
        match self.kind {
            TaskKind::Markov => {
                let mut state = rng.gen_range(FIRST_REGULAR..self.vocab_size);
                seq.push(state);
                while seq.len() < len {
                    state = chain.next(state, rng);
                    seq.push(state);
                }
            }
            TaskKind::CopyWithNoise => {
                let half = (len - 1).div_ceil(2);
                let first: Vec<usize> = (0..half).map(|_| rng.gen_range(FIRST_REGULAR..self.vocab_size)).collect();
                seq.extend_from_slice(&first);
                let mut i = 0;
                while seq.len() < len {
                    let tok = if rng.gen::<f64>() < 0.1 {
                        rng.gen_range(FIRST_REGULAR..self.vocab_size)
                    } else {
                        first[i % half]
                    };
                    seq.push(tok);
                    i += 1;
                }
            }
        }
        seq
    }
}

/// One masked-LM example: corrupted input, masked positions and their
/// original tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSequence {
    pub input: Vec<usize>,
    pub positions: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Masks `round(fraction * (len - 1))` positions (at least one), never the
/// leading token. Each chosen position becomes [`MASK`] with probability
/// 0.8, a random regular token with 0.1, and stays unchanged otherwise.
pub fn mask_sequence<R: Rng + ?Sized>(seq: &[usize], fraction: f64, vocab: usize, rng: &mut R) -> MaskedSequence {
    let candidates: Vec<usize> = (1..seq.len()).collect();
    let count = ((fraction * candidates.len() as f64).round() as usize).clamp(1, candidates.len());
    let mut positions: Vec<usize> = candidates.choose_multiple(rng, count).copied().collect();
    positions.sort_unstable();
    let mut input = seq.to_vec();
    let targets = positions.iter().map(|&p| seq[p]).collect();
    for &p in &positions {
        let u: f64 = rng.gen();
        if u < 0.8 {
            input[p] = MASK;
        } else if u < 0.9 {
            input[p] = rng.gen_range(FIRST_REGULAR..vocab);
        }
    }
    MaskedSequence { input, positions, targets }
}

/// Binary sequence classification: each sequence carries exactly one
/// marker token, and the label is which of the two markers it is.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationTask {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub train_size: usize,
    pub eval_size: usize,
    pub seed: u64,
}

pub const MARKERS: [usize; 2] = [FIRST_REGULAR, FIRST_REGULAR + 1];

#[derive(Debug, Clone)]
pub struct LabeledSplit {
    pub sequences: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
}

impl ClassificationTask {
    pub fn generate(&self) -> Result<(LabeledSplit, LabeledSplit)> {
        if self.vocab_size < FIRST_REGULAR + 3 || self.seq_len < 2 {
            return Err(Error::config("vocab_size", "classification needs two markers plus filler tokens"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let train = self.split(self.train_size, &mut rng);
        rng.set_stream(1);
        let eval = self.split(self.eval_size, &mut rng);
        Ok((train, eval))
    }

    fn split(&self, n: usize, rng: &mut ChaCha8Rng) -> LabeledSplit {
        let filler = MARKERS[1] + 1;
        let mut sequences = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % 2;
            let mut seq = vec![CLS];
            seq.extend((1..self.seq_len).map(|_| rng.gen_range(filler..self.vocab_size)));
            let at = rng.gen_range(1..self.seq_len);
            seq[at] = MARKERS[label];
            sequences.push(seq);
            labels.push(label);
        }
        LabeledSplit { sequences, labels }
    }
}
