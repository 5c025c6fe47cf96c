//! Inverted index with Okapi BM25 scoring.
//!
//! ```text
//! score(D, Q) = sum_{t in Q} idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |D| / avgdl))
//! idf(t)      = ln(1 + (N - df + 0.5) / (df + 0.5))
//! ```
//!
//! The `+1` inside the logarithm keeps every idf positive, so any passage
//! sharing a term with the query scores above zero. Passages scoring exactly
//! zero are never returned.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub passage_id: String,
    pub text: String,
    pub source_doc: String,
}

pub fn read_passages(path: &Path) -> Result<Vec<Passage>> {
    jsonl::read_jsonl(path)
}

/// Lowercases and splits on every non-alphanumeric character. No stemming,
/// no stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self> {
        let params = Self { k1, b };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return Err(Error::InvalidParams(format!("k1 must be >= 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidParams(format!("b must lie in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

/// Named retriever configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RetrieverProfile {
    #[serde(rename = "qrecc-bm25")]
    QreccBm25,
    #[serde(rename = "topiocqa-bm25")]
    TopiocqaBm25,
}

impl RetrieverProfile {
    pub fn id(self) -> &'static str {
        match self {
            Self::QreccBm25 => "qrecc-bm25",
            Self::TopiocqaBm25 => "topiocqa-bm25",
        }
    }

    pub fn params(self) -> Bm25Params {
        match self {
            Self::QreccBm25 => Bm25Params { k1: 0.82, b: 0.68 },
            Self::TopiocqaBm25 => Bm25Params { k1: 0.9, b: 0.4 },
        }
    }
}

impl FromStr for RetrieverProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qrecc-bm25" => Ok(Self::QreccBm25),
            "topiocqa-bm25" => Ok(Self::TopiocqaBm25),
            other => Err(Error::Config {
                field: "retriever_profile".into(),
                message: format!("unknown retriever profile {other:?}"),
            }),
        }
    }
}

/// Token caps applied before indexing and scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLimits {
    pub max_query_tokens: usize,
    pub max_passage_tokens: usize,
}

impl Default for TokenLimits {
    fn default() -> Self {
        Self {
            max_query_tokens: 128,
            max_passage_tokens: 384,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassageIndex {
    params: Bm25Params,
    limits: TokenLimits,
    passage_ids: Vec<String>,
    source_docs: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

/// 1-based position of the first gold passage, or `NotFound`.
///
/// Ordering treats `NotFound` as worse than every found rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rank {
    Found(u32),
    NotFound,
}

impl Rank {
    pub fn from_option(rank: Option<u32>) -> Self {
        rank.map_or(Rank::NotFound, Rank::Found)
    }

    pub fn as_option(self) -> Option<u32> {
        match self {
            Rank::Found(r) => Some(r),
            Rank::NotFound => None,
        }
    }

    pub fn is_found(self) -> bool {
        matches!(self, Rank::Found(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPassage {
    pub passage_id: String,
    pub score: f64,
}

/// Results in descending score order, ties by passage id ascending.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankedResult {
    pub entries: Vec<ScoredPassage>,
}

/// Anything that can return a ranked passage list for a text query.
pub trait Retriever: Sync {
    fn profile_id(&self) -> &str;
    fn retrieve(&self, query: &str, k: usize) -> RankedResult;
}

/// Canonical result ordering: score descending, then passage id ascending.
pub fn compare_scored(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

impl PassageIndex {
    pub fn build(passages: &[Passage], params: Bm25Params) -> Result<Self> {
        Self::build_with_limits(passages, params, TokenLimits::default())
    }

    pub fn build_with_limits(
        passages: &[Passage],
        params: Bm25Params,
        limits: TokenLimits,
    ) -> Result<Self> {
        params.validate()?;
        if passages.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut seen = HashSet::new();
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(passages.len());
        for (ord, p) in passages.iter().enumerate() {
            if !seen.insert(p.passage_id.as_str()) {
                return Err(Error::DuplicatePassage(p.passage_id.clone()));
            }
            if p.text.trim().is_empty() {
                return Err(Error::InvalidPassage {
                    passage_id: p.passage_id.clone(),
                    message: "empty text".into(),
                });
            }
            let mut tokens = tokenize(&p.text);
            tokens.truncate(limits.max_passage_tokens);
            doc_lengths.push(tokens.len() as u32);
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *counts.entry(t).or_default() += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting {
                    doc: ord as u32,
                    tf,
                });
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        Ok(Self {
            params,
            limits,
            passage_ids: passages.iter().map(|p| p.passage_id.clone()).collect(),
            source_docs: passages.iter().map(|p| p.source_doc.clone()).collect(),
            avg_doc_length: total as f64 / doc_lengths.len() as f64,
            doc_lengths,
            postings,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn limits(&self) -> TokenLimits {
        self.limits
    }

    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn passage_id(&self, ord: usize) -> &str {
        &self.passage_ids[ord]
    }

    pub fn source_doc(&self, ord: usize) -> &str {
        &self.source_docs[ord]
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    /// Tokenizes and applies the query token cap.
    pub fn query_tokens(&self, query: &str) -> Vec<String> {
        let mut tokens = tokenize(query);
        tokens.truncate(self.limits.max_query_tokens);
        tokens
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.doc_count() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, doc: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = 1.0 - b + b * self.doc_lengths[doc] as f64 / self.avg_doc_length;
        idf * tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// Scores one document. Repeated query terms count once per occurrence.
    pub fn bm25_score(&self, query_tokens: &[String], doc: usize) -> f64 {
        let mut score = 0.0;
        for term in query_tokens {
            let postings = self.postings(term);
            if let Ok(pos) = postings.binary_search_by_key(&(doc as u32), |p| p.doc) {
                score += self.term_weight(self.idf(postings.len()), postings[pos].tf, doc);
            }
        }
        score
    }

    /// Term-at-a-time scoring over the postings of the query terms.
    pub fn retrieve_top_k(&self, query: &str, k: usize) -> RankedResult {
        let tokens = self.query_tokens(query);
        let mut scores = vec![0.0f64; self.doc_count()];
        let mut touched = Vec::new();
        for term in &tokens {
            let postings = self.postings(term);
            if postings.is_empty() {
                continue;
            }
            let idf = self.idf(postings.len());
            for p in postings {
                let d = p.doc as usize;
                if scores[d] == 0.0 {
                    touched.push(d);
                }
                scores[d] += self.term_weight(idf, p.tf, d);
            }
        }
        let mut hits: Vec<(usize, f64)> = touched
            .into_iter()
            .map(|d| (d, scores[d]))
            .filter(|&(_, s)| s > 0.0)
            .collect();
        hits.sort_by(|a, b| compare_scored((self.passage_id(a.0), a.1), (self.passage_id(b.0), b.1)));
        hits.truncate(k);
        RankedResult {
            entries: hits
                .into_iter()
                .map(|(d, score)| ScoredPassage {
                    passage_id: self.passage_ids[d].clone(),
                    score,
                })
                .collect(),
        }
    }

    const MAGIC: &'static [u8; 8] = b"QRFIDX\0\0";
    const VERSION: u32 = 1;

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = Vec::new();
        self.write_to(&mut w).expect("writing to a Vec cannot fail");
        std::fs::write(path, w).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut bytes.as_slice())
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&self.params.k1.to_le_bytes())?;
        w.write_all(&self.params.b.to_le_bytes())?;
        w.write_all(&(self.limits.max_query_tokens as u64).to_le_bytes())?;
        w.write_all(&(self.limits.max_passage_tokens as u64).to_le_bytes())?;
        w.write_all(&(self.doc_count() as u64).to_le_bytes())?;
        for i in 0..self.doc_count() {
            write_str(w, &self.passage_ids[i])?;
            write_str(w, &self.source_docs[i])?;
            w.write_all(&self.doc_lengths[i].to_le_bytes())?;
        }
        w.write_all(&(self.postings.len() as u64).to_le_bytes())?;
        for (term, list) in &self.postings {
            write_str(w, term)?;
            w.write_all(&(list.len() as u64).to_le_bytes())?;
            for p in list {
                w.write_all(&p.doc.to_le_bytes())?;
                w.write_all(&p.tf.to_le_bytes())?;
            }
        }
        Ok(())
    }

    fn read_from(r: &mut impl Read) -> Result<Self> {
        let fmt_err = |e: std::io::Error| Error::IndexFormat(e.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(fmt_err)?;
        if &magic != Self::MAGIC {
            return Err(Error::IndexFormat("bad magic".into()));
        }
        let version = read_u32(r).map_err(fmt_err)?;
        if version != Self::VERSION {
            return Err(Error::IndexFormat(format!("unsupported version {version}")));
        }
        let params = Bm25Params {
            k1: read_f64(r).map_err(fmt_err)?,
            b: read_f64(r).map_err(fmt_err)?,
        };
        let limits = TokenLimits {
            max_query_tokens: read_u64(r).map_err(fmt_err)? as usize,
            max_passage_tokens: read_u64(r).map_err(fmt_err)? as usize,
        };
        let n = read_u64(r).map_err(fmt_err)? as usize;
        let mut passage_ids = Vec::with_capacity(n);
        let mut source_docs = Vec::with_capacity(n);
        let mut doc_lengths = Vec::with_capacity(n);
        for _ in 0..n {
            passage_ids.push(read_str(r).map_err(fmt_err)?);
            source_docs.push(read_str(r).map_err(fmt_err)?);
            doc_lengths.push(read_u32(r).map_err(fmt_err)?);
        }
        let n_terms = read_u64(r).map_err(fmt_err)? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..n_terms {
            let term = read_str(r).map_err(fmt_err)?;
            let len = read_u64(r).map_err(fmt_err)? as usize;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let doc = read_u32(r).map_err(fmt_err)?;
                let tf = read_u32(r).map_err(fmt_err)?;
                if doc as usize >= n {
                    return Err(Error::IndexFormat(format!("posting ordinal {doc} >= {n}")));
                }
                list.push(Posting { doc, tf });
            }
            postings.insert(term, list);
        }
        if n == 0 {
            return Err(Error::EmptyCorpus);
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        Ok(Self {
            params,
            limits,
            passage_ids,
            source_docs,
            avg_doc_length: total as f64 / n as f64,
            doc_lengths,
            postings,
        })
    }
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u64).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn read_str(r: &mut impl Read) -> std::io::Result<String> {
    let len = read_u64(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

/// A BM25 index tagged with the profile it was built for.
pub struct Bm25Retriever<'a> {
    pub index: &'a PassageIndex,
    pub profile: String,
}

impl Retriever for Bm25Retriever<'_> {
    fn profile_id(&self) -> &str {
        &self.profile
    }

    fn retrieve(&self, query: &str, k: usize) -> RankedResult {
        self.index.retrieve_top_k(query, k)
    }
}

/// Smallest 1-based position whose passage is gold.
pub fn gold_rank(result: &RankedResult, gold_ids: &[String]) -> Result<Rank> {
    if gold_ids.is_empty() {
        return Err(Error::EmptyGoldIds);
    }
    Ok(result
        .entries
        .iter()
        .position(|e| gold_ids.contains(&e.passage_id))
        .map_or(Rank::NotFound, |i| Rank::Found(i as u32 + 1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(id: &str, text: &str) -> Passage {
        Passage {
            passage_id: id.into(),
            text: text.into(),
            source_doc: "doc".into(),
        }
    }

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn tokenizer_rule() {
        assert_eq!(tokenize("Heaven Shall Burn!"), toks(&["heaven", "shall", "burn"]));
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Q1: who-is X"), toks(&["q1", "who", "is", "x"]));
    }

    #[test]
    fn single_passage_stats() {
        let idx = PassageIndex::build(&[p("a", "a b a")], Bm25Params::new(1.2, 0.75).unwrap()).unwrap();
        assert_eq!(idx.doc_count(), 1);
        assert_eq!(idx.avg_doc_length(), 3.0);
        assert_eq!(idx.postings("a"), &[Posting { doc: 0, tf: 2 }]);
        assert_eq!(idx.postings("b"), &[Posting { doc: 0, tf: 1 }]);
    }

    #[test]
    fn build_errors() {
        let params = Bm25Params { k1: 0.9, b: 0.4 };
        assert!(matches!(PassageIndex::build(&[], params), Err(Error::EmptyCorpus)));
        let dup = [p("x", "a"), p("x", "b")];
        assert!(matches!(PassageIndex::build(&dup, params), Err(Error::DuplicatePassage(id)) if id == "x"));
        assert!(Bm25Params::new(-1.0, 0.5).is_err());
        assert!(Bm25Params::new(1.0, 1.5).is_err());
    }

    #[test]
    fn single_doc_score_is_ln_four_thirds_for_any_params() {
        for (k1, b) in [(0.0, 0.0), (0.82, 0.68), (0.9, 0.4), (2.0, 1.0)] {
            let idx = PassageIndex::build(&[p("a", "a")], Bm25Params { k1, b }).unwrap();
            let s = idx.bm25_score(&toks(&["a"]), 0);
            assert!((s - (4.0f64 / 3.0).ln()).abs() < 1e-12, "{k1} {b} {s}");
            assert!((s - 0.28768).abs() < 1e-5);
        }
    }

    #[test]
    fn absent_terms_score_zero() {
        let idx = PassageIndex::build(&[p("a", "x y"), p("b", "y z")], Bm25Params { k1: 0.9, b: 0.4 }).unwrap();
        assert_eq!(idx.bm25_score(&toks(&["nope"]), 0), 0.0);
        assert!(idx.retrieve_top_k("nope never", 10).entries.is_empty());
        let both = idx.bm25_score(&toks(&["x", "nope"]), 0);
        assert_eq!(both, idx.bm25_score(&toks(&["x"]), 0));
    }

    #[test]
    fn duplicate_query_terms_count_per_occurrence() {
        let idx = PassageIndex::build(&[p("a", "x y"), p("b", "y z")], Bm25Params { k1: 0.9, b: 0.4 }).unwrap();
        let once = idx.bm25_score(&toks(&["x"]), 0);
        let twice = idx.bm25_score(&toks(&["x", "x"]), 0);
        assert!((twice - 2.0 * once).abs() < 1e-15);
    }

    #[test]
    fn ties_break_by_passage_id() {
        let idx = PassageIndex::build(
            &[p("zeta", "apple pie"), p("alpha", "apple pie"), p("mid", "banana")],
            Bm25Params { k1: 0.9, b: 0.4 },
        )
        .unwrap();
        let res = idx.retrieve_top_k("apple", 10);
        let ids: Vec<_> = res.entries.iter().map(|e| e.passage_id.as_str()).collect();
        assert_eq!(ids, ["alpha", "zeta"]);
        assert_eq!(idx.retrieve_top_k("apple banana", 1).entries.len(), 1);
    }

    #[test]
    fn query_cap_truncates() {
        let limits = TokenLimits {
            max_query_tokens: 1,
            max_passage_tokens: 2,
        };
        let idx = PassageIndex::build_with_limits(&[p("a", "x y z"), p("b", "z")], Bm25Params { k1: 0.9, b: 0.4 }, limits)
            .unwrap();
        // passage "a" is truncated to "x y"
        assert!(idx.postings("z").iter().all(|p| p.doc == 1));
        assert!(idx.retrieve_top_k("w z", 10).entries.is_empty());
    }

    #[test]
    fn gold_rank_rules() {
        let res = RankedResult {
            entries: (1..=8)
                .map(|i| ScoredPassage {
                    passage_id: format!("p{i}"),
                    score: 10.0 - i as f64,
                })
                .collect(),
        };
        assert_eq!(gold_rank(&res, &toks(&["p1"])).unwrap(), Rank::Found(1));
        assert_eq!(gold_rank(&res, &toks(&["q"])).unwrap(), Rank::NotFound);
        assert_eq!(gold_rank(&res, &toks(&["p7", "p3"])).unwrap(), Rank::Found(3));
        assert!(matches!(gold_rank(&res, &[]), Err(Error::EmptyGoldIds)));
    }

    #[test]
    fn not_found_sorts_last() {
        assert!(Rank::Found(1000) < Rank::NotFound);
        assert!(Rank::Found(2) < Rank::Found(3));
    }

    #[test]
    fn save_load_roundtrip() {
        let idx = PassageIndex::build(
            &[p("a", "the cat sat"), p("b", "the dog ran ran")],
            Bm25Params { k1: 0.82, b: 0.68 },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.bin");
        idx.save(&path).unwrap();
        assert_eq!(PassageIndex::load(&path).unwrap(), idx);
        std::fs::write(&path, b"garbage").unwrap();
        assert!(matches!(PassageIndex::load(&path), Err(Error::IndexFormat(_))));
    }
}
