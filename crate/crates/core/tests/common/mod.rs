//! Generators and definition-level oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use qrf_core::config::PipelineConfig;
use qrf_core::eval::{Qrels, Run};
use qrf_core::feedback::{FeedbackRecord, QuerySource};
use qrf_core::index::{Bm25Params, Passage};
use rand::seq::IndexedRandom;
use rand::Rng;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy")
}

/// Default config over the bundled toy data with the mock client.
pub fn toy_config(work_dir: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.paths.conversations = data_dir().join("conversations.jsonl");
    cfg.paths.passages = data_dir().join("passages.jsonl");
    cfg.paths.work_dir = work_dir.to_path_buf();
    cfg.client.mock = true;
    cfg
}

// ---------------------------------------------------------------- BM25

pub struct Corpus {
    pub passages: Vec<Passage>,
    pub queries: Vec<String>,
}

/// Up to 50 passages of up to 200 tokens over a small vocabulary, plus
/// queries of up to 8 tokens that may include unseen words.
pub fn random_corpus<R: Rng>(rng: &mut R) -> Corpus {
    let vocab_size = rng.random_range(3..60);
    let vocab: Vec<String> = (0..vocab_size).map(|i| format!("w{i}")).collect();
    let n_docs = rng.random_range(1..=50);
    let passages = (0..n_docs)
        .map(|d| {
            let len = rng.random_range(1..=200);
            let words: Vec<&str> = (0..len)
                .map(|_| {
                    // Zipf-ish skew keeps some terms frequent.
                    let i = (rng.random::<f64>().powi(2) * vocab_size as f64) as usize;
                    vocab[i.min(vocab_size - 1)].as_str()
                })
                .collect();
            Passage {
                passage_id: format!("p{d:03}"),
                text: words.join(" "),
                source_doc: format!("doc{}", d / 5),
            }
        })
        .collect();
    let queries = (0..10)
        .map(|_| {
            let len = rng.random_range(1..=8);
            (0..len)
                .map(|_| {
                    if rng.random_bool(0.1) {
                        "unseen".to_string()
                    } else {
                        vocab.choose(rng).unwrap().to_uppercase()
                    }
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    Corpus { passages, queries }
}

fn oracle_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Scores every passage from scratch and sorts by score descending, then
/// passage id. Zero scores are dropped.
pub fn bm25_brute_force(passages: &[Passage], params: Bm25Params, query: &str, k: usize) -> Vec<(String, f64)> {
    let docs: Vec<Vec<String>> = passages.iter().map(|p| oracle_tokens(&p.text)).collect();
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let q = oracle_tokens(query);
    let mut scored: Vec<(String, f64)> = passages
        .iter()
        .zip(&docs)
        .map(|(p, doc)| {
            let mut score = 0.0;
            for term in &q {
                let tf = doc.iter().filter(|t| *t == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = docs.iter().filter(|d| d.contains(term)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let norm = 1.0 - params.b + params.b * doc.len() as f64 / avgdl;
                score += idf * tf * (params.k1 + 1.0) / (tf + params.k1 * norm);
            }
            (p.passage_id.clone(), score)
        })
        .filter(|(_, s)| *s > 0.0)
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

// ------------------------------------------------------------- metrics

pub struct MetricInstance {
    pub run: Run,
    pub qrels: Qrels,
}

pub fn random_metric_instance<R: Rng>(rng: &mut R) -> MetricInstance {
    let pool: Vec<String> = (0..rng.random_range(5..300)).map(|i| format!("d{i}")).collect();
    let n_queries = rng.random_range(1..30);
    let mut run = Run::new("r");
    let mut qrels = Qrels::new();
    for q in 0..n_queries {
        let qid = format!("q{q}");
        let mut rels = BTreeMap::new();
        for _ in 0..rng.random_range(1..5) {
            rels.insert(pool.choose(rng).unwrap().clone(), rng.random_range(0..3u32));
        }
        qrels.insert(qid.clone(), rels);
        if rng.random_bool(0.9) {
            let depth = rng.random_range(0..=pool.len().min(150));
            let mut ids = pool.clone();
            // Partial Fisher-Yates for a random prefix.
            for i in 0..depth {
                let j = rng.random_range(i..ids.len());
                ids.swap(i, j);
            }
            let list = ids[..depth]
                .iter()
                .enumerate()
                .map(|(i, id)| (id.clone(), (depth - i) as f64))
                .collect();
            run.queries.insert(qid, list);
        }
    }
    MetricInstance { run, qrels }
}

fn relevant(rels: &BTreeMap<String, u32>) -> HashSet<&str> {
    rels.iter().filter(|(_, g)| **g > 0).map(|(p, _)| p.as_str()).collect()
}

fn ranked<'a>(run: &'a Run, qid: &str) -> Vec<&'a str> {
    run.queries
        .get(qid)
        .map(|l| l.iter().map(|(p, _)| p.as_str()).collect())
        .unwrap_or_default()
}

pub fn oracle_mrr(run: &Run, qrels: &Qrels) -> f64 {
    let mut total = 0.0;
    for (qid, rels) in qrels {
        let rel = relevant(rels);
        for (i, pid) in ranked(run, qid).iter().enumerate() {
            if rel.contains(pid) {
                total += 1.0 / (i + 1) as f64;
                break;
            }
        }
    }
    total / qrels.len() as f64
}

pub fn oracle_ndcg3(run: &Run, qrels: &Qrels) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for (qid, rels) in qrels {
        let rel = relevant(rels);
        if rel.is_empty() {
            continue;
        }
        let list = ranked(run, qid);
        let mut dcg = 0.0;
        for i in 1..=3 {
            if list.get(i - 1).is_some_and(|p| rel.contains(p)) {
                dcg += 1.0 / ((i + 1) as f64).log2();
            }
        }
        let mut idcg = 0.0;
        for i in 1..=rel.len().min(3) {
            idcg += 1.0 / ((i + 1) as f64).log2();
        }
        total += dcg / idcg;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

pub fn oracle_recall(run: &Run, qrels: &Qrels, k: usize) -> f64 {
    let mut hits = 0.0;
    for (qid, rels) in qrels {
        let rel = relevant(rels);
        if ranked(run, qid).iter().take(k).any(|p| rel.contains(p)) {
            hits += 1.0;
        }
    }
    hits / qrels.len() as f64
}

/// Run and qrels with one query whose single gold passage sits at `rank`.
pub fn single_gold_at(rank: usize) -> MetricInstance {
    let mut run = Run::new("hand");
    run.queries.insert(
        "q".into(),
        (1..=rank.max(12)).map(|i| (format!("d{i}"), 100.0 - i as f64)).collect(),
    );
    let mut qrels = Qrels::new();
    qrels.insert("q".into(), BTreeMap::from([(format!("d{rank}"), 1)]));
    MetricInstance { run, qrels }
}

// ------------------------------------------------------------ feedback

const TEXTS: &[&str] = &[
    "who founded it", "Who founded it?", "who founded the band", "when was the album released",
    "album release date", "where is the venue", "what genre", "What Genre", "members of the band",
    "first tour", "record label", "chart position",
];

/// One turn of feedback with random sources, ranks and partly duplicated
/// texts.
pub fn random_feedback<R: Rng>(rng: &mut R) -> Vec<FeedbackRecord> {
    let sources = [
        QuerySource::QuestionRewriting,
        QuerySource::Planning,
        QuerySource::QueryExpansion,
        QuerySource::BaselineOriginal,
        QuerySource::BaselineHuman,
    ];
    let n = rng.random_range(1..=20);
    let mut idx: HashMap<QuerySource, u32> = HashMap::new();
    let mut records: Vec<FeedbackRecord> = (0..n)
        .map(|_| {
            let method = if rng.random_bool(0.9) {
                sources[rng.random_range(0..3)]
            } else {
                sources[rng.random_range(3..5)]
            };
            let i = idx.entry(method).or_default();
            *i += 1;
            let rank = if rng.random_bool(0.2) {
                None
            } else if rng.random_bool(0.5) {
                Some(rng.random_range(1..=10))
            } else {
                Some(rng.random_range(1..=100))
            };
            FeedbackRecord {
                conv_id: "c".into(),
                turn_id: 1,
                method,
                rewrite: TEXTS.choose(rng).unwrap().to_string(),
                pseudo_answer: None,
                candidate_idx: *i - 1,
                rank,
                retriever_profile: "topiocqa-bm25".into(),
                top_k: 100,
            }
        })
        .collect();
    records.sort_by(|a, b| (a.method, a.candidate_idx).cmp(&(b.method, b.candidate_idx)));
    records
}
