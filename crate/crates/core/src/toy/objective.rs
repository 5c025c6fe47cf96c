//! Log-likelihood, SFT and DPO objectives with analytic gradients, plus a
//! central-difference gradient checker.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;

use super::{context_bucket, Gradient, ToyLMParams, ToyVocab};

/// Denominator floor for relative gradient error.
pub const REL_ERR_FLOOR: f64 = 1e-5;

/// A target sequence as `(row, next token)` transitions, BOS to EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqExample {
    pub transitions: Vec<(usize, u32)>,
}

impl SeqExample {
    pub fn from_ids(vocab_size: usize, bucket: usize, ids: &[u32]) -> Self {
        let mut prev = ToyVocab::BOS_ID;
        let mut transitions = Vec::with_capacity(ids.len() + 1);
        for &next in ids.iter().chain(std::iter::once(&ToyVocab::EOS_ID)) {
            transitions.push((bucket * vocab_size + prev as usize, next));
            prev = next;
        }
        Self { transitions }
    }

    pub fn encode(vocab: &ToyVocab, buckets: usize, context: &str, target: &str) -> Self {
        Self::from_ids(vocab.len(), context_bucket(context, buckets), &vocab.encode(target))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairExample {
    pub chosen: SeqExample,
    pub rejected: SeqExample,
}

/// Numerically stable log-softmax of one row; `None` is the all-zero row.
pub fn log_softmax(row: Option<&[f64]>, vocab_size: usize) -> Vec<f64> {
    match row {
        None => vec![-(vocab_size as f64).ln(); vocab_size],
        Some(r) => {
            let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + r.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            r.iter().map(|x| x - lse).collect()
        }
    }
}

/// Log-probabilities and probabilities of one row.
struct RowDist {
    log_probs: Vec<f64>,
    probs: Vec<f64>,
}

impl RowDist {
    fn new(row: Option<&[f64]>, vocab_size: usize) -> Self {
        match row {
            None => Self {
                log_probs: vec![-(vocab_size as f64).ln(); vocab_size],
                probs: vec![1.0 / vocab_size as f64; vocab_size],
            },
            Some(r) => {
                let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut probs: Vec<f64> = r.iter().map(|x| (x - max).exp()).collect();
                let sum: f64 = probs.iter().sum();
                let lse = max + sum.ln();
                probs.iter_mut().for_each(|p| *p /= sum);
                Self {
                    log_probs: r.iter().map(|x| x - lse).collect(),
                    probs,
                }
            }
        }
    }
}

type RowCache = BTreeMap<usize, RowDist>;

fn row_cache<'a>(params: &ToyLMParams, seqs: impl IntoIterator<Item = &'a SeqExample>) -> RowCache {
    let mut cache = RowCache::new();
    for s in seqs {
        for &(row, _) in &s.transitions {
            cache
                .entry(row)
                .or_insert_with(|| RowDist::new(params.row(row), params.vocab_size()));
        }
    }
    cache
}

fn cached_log_prob(cache: &RowCache, seq: &SeqExample) -> f64 {
    seq.transitions
        .iter()
        .map(|&(row, next)| cache[&row].log_probs[next as usize])
        .sum()
}

/// `log pi(target | context)` summed over tokens including EOS.
pub fn sequence_log_prob(params: &ToyLMParams, seq: &SeqExample) -> f64 {
    cached_log_prob(&row_cache(params, [seq]), seq)
}

/// Accumulates `sum_i a_i * d log p_i / d logits`.
struct GradAccumulator {
    vocab_size: usize,
    rows: BTreeMap<usize, (f64, Vec<f64>)>,
}

impl GradAccumulator {
    fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            rows: BTreeMap::new(),
        }
    }

    fn add(&mut self, seq: &SeqExample, weight: f64) {
        for &(row, next) in &seq.transitions {
            let v = self.vocab_size;
            let (total, counts) = self.rows.entry(row).or_insert_with(|| (0.0, vec![0.0; v]));
            *total += weight;
            counts[next as usize] += weight;
        }
    }

    fn finish(self, cache: &RowCache) -> Gradient {
        let rows = self
            .rows
            .into_iter()
            .map(|(row, (total, counts))| {
                let probs = &cache[&row].probs;
                let g = counts.iter().zip(probs).map(|(c, p)| c - total * p).collect();
                (row, g)
            })
            .collect();
        Gradient {
            rows,
            vocab_size: self.vocab_size,
        }
    }
}

/// Mean negative sequence log-likelihood and its gradient.
pub fn sft_loss_grad(params: &ToyLMParams, data: &[SeqExample]) -> (f64, Gradient) {
    let cache = row_cache(params, data);
    let n = data.len() as f64;
    let loss = -data.iter().map(|s| cached_log_prob(&cache, s)).sum::<f64>() / n;
    let mut acc = GradAccumulator::new(params.vocab_size());
    for s in data {
        acc.add(s, -1.0 / n);
    }
    (loss, acc.finish(&cache))
}

/// Reference log-probabilities `(chosen, rejected)` for every pair.
pub fn reference_log_probs(reference: &ToyLMParams, pairs: &[PairExample]) -> Vec<(f64, f64)> {
    let cache = row_cache(reference, pairs.iter().flat_map(|p| [&p.chosen, &p.rejected]));
    pairs
        .iter()
        .map(|p| (cached_log_prob(&cache, &p.chosen), cached_log_prob(&cache, &p.rejected)))
        .collect()
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub struct DpoOutput {
    pub loss: f64,
    pub grad: Gradient,
    /// `r_w - r_l` per pair.
    pub margins: Vec<f64>,
}

/// `-mean log sigmoid(r_w - r_l)` with `r = beta * (log pi - log pi_ref)`.
pub fn dpo_loss_grad(params: &ToyLMParams, reference: &[(f64, f64)], pairs: &[PairExample], beta: f64) -> DpoOutput {
    assert_eq!(reference.len(), pairs.len());
    let cache = row_cache(params, pairs.iter().flat_map(|p| [&p.chosen, &p.rejected]));
    let n = pairs.len() as f64;
    let mut acc = GradAccumulator::new(params.vocab_size());
    let mut loss = 0.0;
    let mut margins = Vec::with_capacity(pairs.len());
    for (p, &(ref_w, ref_l)) in pairs.iter().zip(reference) {
        let r_w = beta * (cached_log_prob(&cache, &p.chosen) - ref_w);
        let r_l = beta * (cached_log_prob(&cache, &p.rejected) - ref_l);
        let z = r_w - r_l;
        loss += softplus(-z);
        margins.push(z);
        let dz = -sigmoid(-z) / n;
        acc.add(&p.chosen, dz * beta);
        acc.add(&p.rejected, -dz * beta);
    }
    DpoOutput {
        loss: loss / n,
        grad: acc.finish(&cache),
        margins,
    }
}

/// `sum p^2` over materialized logits.
pub fn quadratic_loss_grad(params: &ToyLMParams) -> (f64, Gradient) {
    let mut loss = 0.0;
    let mut rows = BTreeMap::new();
    for (i, r) in params.materialized_rows() {
        loss += r.iter().map(|x| x * x).sum::<f64>();
        rows.insert(i, r.iter().map(|x| 2.0 * x).collect());
    }
    (
        loss,
        Gradient {
            rows,
            vocab_size: params.vocab_size(),
        },
    )
}

#[derive(Debug, Clone, Copy)]
pub enum GradCheckKind<'a> {
    Sft(&'a [SeqExample]),
    Dpo {
        pairs: &'a [PairExample],
        reference: &'a [(f64, f64)],
        beta: f64,
    },
    Quadratic,
}

impl GradCheckKind<'_> {
    pub fn loss_grad(&self, params: &ToyLMParams) -> (f64, Gradient) {
        match *self {
            Self::Sft(data) => sft_loss_grad(params, data),
            Self::Dpo { pairs, reference, beta } => {
                let out = dpo_loss_grad(params, reference, pairs, beta);
                (out.loss, out.grad)
            }
            Self::Quadratic => quadratic_loss_grad(params),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckResult {
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub worst_coord: usize,
}

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR * max(1, |loss|))`.
pub fn relative_error(analytic: f64, numeric: f64, loss: f64) -> f64 {
    let floor = REL_ERR_FLOOR * loss.abs().max(1.0);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient with central differences of step `h` on
/// `n_coords` coordinates: half from rows the objective touches, the rest
/// uniform over all logits.
pub fn grad_check<R: Rng + ?Sized>(
    kind: GradCheckKind<'_>,
    params: &ToyLMParams,
    n_coords: usize,
    h: f64,
    rng: &mut R,
) -> GradCheckResult {
    let (loss, grad) = kind.loss_grad(params);
    let support = grad.support();
    let from_support = (n_coords / 2).min(support.len());
    let mut coords: Vec<usize> = sample(rng, support.len(), from_support)
        .into_iter()
        .map(|i| support[i])
        .collect();
    while coords.len() < n_coords {
        coords.push(rng.random_range(0..params.len()));
    }

    let mut work = params.clone();
    let mut result = GradCheckResult {
        coords_checked: coords.len(),
        max_rel_err: 0.0,
        worst_coord: 0,
    };
    for &c in &coords {
        let x = params.get(c);
        work.set(c, x + h);
        let plus = kind.loss_grad(&work).0;
        work.set(c, x - h);
        let minus = kind.loss_grad(&work).0;
        work.set(c, x);
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(grad.get(c), numeric, loss);
        if err > result.max_rel_err {
            result.max_rel_err = err;
            result.worst_coord = c;
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn tiny() -> (ToyLMParams, Vec<SeqExample>) {
        let mut rng = substream(1, "tiny");
        let p = ToyLMParams::random(2, 6, 1.0, &mut rng);
        let data = vec![
            SeqExample::from_ids(6, 0, &[3, 4, 5]),
            SeqExample::from_ids(6, 1, &[4, 4]),
            SeqExample::from_ids(6, 1, &[]),
        ];
        (p, data)
    }

    #[test]
    fn uniform_log_prob() {
        let p = ToyLMParams::zeros(4, 5);
        let s = SeqExample::from_ids(5, 2, &[3, 4]);
        assert!((sequence_log_prob(&p, &s) - 3.0 * (0.2f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn log_softmax_normalizes() {
        let l = log_softmax(Some(&[1000.0, 0.0, -3.0]), 3);
        assert!((l.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dpo_at_reference_is_ln2() {
        let (p, data) = tiny();
        let pairs = vec![PairExample {
            chosen: data[0].clone(),
            rejected: data[1].clone(),
        }];
        let reference = reference_log_probs(&p, &pairs);
        let out = dpo_loss_grad(&p, &reference, &pairs, 0.1);
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(out.margins, [0.0]);
    }

    #[test]
    fn sft_gradient_matches_differences() {
        let (p, data) = tiny();
        let r = grad_check(GradCheckKind::Sft(&data), &p, 60, 1e-5, &mut substream(2, "gc"));
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(-1000.0), 0.0);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
