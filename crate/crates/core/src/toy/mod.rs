//! Desk-scale language model for exercising the SFT and DPO objectives.
//!
//! The model is a context-bucketed bigram: the dialogue context is hashed
//! into one of `C` buckets and each next-token distribution is a softmax
//! over a free logit row indexed by `(bucket, previous token)`. Rows that
//! were never written hold implicit zeros, i.e. a uniform distribution, so
//! the `C x |V| x |V|` tensor is only materialized where training touches it.

mod objective;
mod train;

pub use objective::{
    dpo_loss_grad, grad_check, log_softmax, quadratic_loss_grad, reference_log_probs, relative_error,
    sequence_log_prob, sft_loss_grad, DpoOutput, GradCheckKind, GradCheckResult, PairExample, SeqExample,
    REL_ERR_FLOOR,
};
pub use train::{
    build_vocab, encode_dpo, encode_sft, train, Objective, StepRecord, TrainConfig, TrainingData, TrainingReport,
};

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;

use crate::rng::fnv1a64;

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const DEFAULT_BUCKETS: usize = 64;

/// Word-level vocabulary. Ids 0, 1, 2 are BOS, EOS and UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyVocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl ToyVocab {
    pub const BOS_ID: u32 = 0;
    pub const EOS_ID: u32 = 1;
    pub const UNK_ID: u32 = 2;

    /// Builds a vocabulary from the whitespace tokens of `texts`, sorted.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<&str> = texts
            .into_iter()
            .flat_map(str::split_whitespace)
            .filter(|w| ![BOS, EOS, UNK].contains(w))
            .collect();
        let tokens: Vec<String> = [BOS, EOS, UNK]
            .into_iter()
            .chain(words)
            .map(str::to_string)
            .collect();
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    /// Whitespace tokens mapped to ids; unknown words become UNK.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }
}

/// Context bucket: 64-bit FNV-1a of the context string, modulo `buckets`.
pub fn context_bucket(context: &str, buckets: usize) -> usize {
    (fnv1a64(context.as_bytes()) % buckets as u64) as usize
}

/// Logits indexed by (context bucket, previous token, next token).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLMParams {
    buckets: usize,
    vocab_size: usize,
    rows: Vec<Option<Box<[f64]>>>,
}

impl ToyLMParams {
    /// All-zero logits (uniform next-token distributions).
    pub fn zeros(buckets: usize, vocab_size: usize) -> Self {
        assert!(buckets > 0 && vocab_size > 0);
        Self {
            buckets,
            vocab_size,
            rows: vec![None; buckets * vocab_size],
        }
    }

    /// Fully materialized logits drawn uniformly from `[-scale, scale)`.
    pub fn random<R: Rng + ?Sized>(buckets: usize, vocab_size: usize, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(buckets, vocab_size);
        for r in 0..p.rows.len() {
            let row: Box<[f64]> = (0..vocab_size)
                .map(|_| rng.random_range(-scale..scale))
                .collect();
            p.rows[r] = Some(row);
        }
        p
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Total number of logits, materialized or not.
    pub fn len(&self) -> usize {
        self.rows.len() * self.vocab_size
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn row_index(&self, bucket: usize, prev: u32) -> usize {
        bucket * self.vocab_size + prev as usize
    }

    pub fn row(&self, row: usize) -> Option<&[f64]> {
        self.rows[row].as_deref()
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let v = self.vocab_size;
        self.rows[row].get_or_insert_with(|| vec![0.0; v].into_boxed_slice())
    }

    pub fn materialized_rows(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows.iter().enumerate().filter_map(|(i, r)| r.as_deref().map(|r| (i, r)))
    }

    /// Logit by flat coordinate `row * |V| + next`.
    pub fn get(&self, coord: usize) -> f64 {
        let (row, col) = (coord / self.vocab_size, coord % self.vocab_size);
        self.rows[row].as_ref().map_or(0.0, |r| r[col])
    }

    pub fn set(&mut self, coord: usize, value: f64) {
        let (row, col) = (coord / self.vocab_size, coord % self.vocab_size);
        self.row_mut(row)[col] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.materialized_rows().all(|(_, r)| r.iter().all(|x| x.is_finite()))
    }

    /// `params -= lr * grad`.
    pub fn apply(&mut self, grad: &Gradient, learning_rate: f64) {
        for (&row, g) in &grad.rows {
            for (p, gi) in self.row_mut(row).iter_mut().zip(g.iter()) {
                *p -= learning_rate * gi;
            }
        }
    }
}

/// Gradient over the rows an objective touches; other rows are zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradient {
    pub rows: BTreeMap<usize, Vec<f64>>,
    pub vocab_size: usize,
}

impl Gradient {
    pub fn get(&self, coord: usize) -> f64 {
        let (row, col) = (coord / self.vocab_size, coord % self.vocab_size);
        self.rows.get(&row).map_or(0.0, |r| r[col])
    }

    pub fn norm(&self) -> f64 {
        self.rows.values().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Flat coordinates of every stored entry.
    pub fn support(&self) -> Vec<usize> {
        self.rows
            .keys()
            .flat_map(|&r| (0..self.vocab_size).map(move |c| r * self.vocab_size + c))
            .collect()
    }
}
