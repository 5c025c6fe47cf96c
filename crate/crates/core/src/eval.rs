//! Retrieval evaluation over TREC-style run and qrels files.
//!
//! Relevance is binary (grade > 0). MRR is computed at run depth; NDCG@3
//! uses gain 1 and discount `log2(i + 1)`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conversation::TurnType;
use crate::error::{Error, Result};
use crate::index::RankedResult;

/// query id -> ranked passage ids with scores, best first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    pub tag: String,
    pub queries: BTreeMap<String, Vec<(String, f64)>>,
}

/// query id -> passage id -> grade.
pub type Qrels = BTreeMap<String, BTreeMap<String, u32>>;

impl Run {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            queries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, query_id: impl Into<String>, result: &RankedResult) {
        self.queries.insert(
            query_id.into(),
            result.entries.iter().map(|e| (e.passage_id.clone(), e.score)).collect(),
        );
    }

    /// Copy truncated to `depth` entries per query.
    pub fn truncated(&self, depth: usize) -> Run {
        Run {
            tag: self.tag.clone(),
            queries: self
                .queries
                .iter()
                .map(|(q, list)| (q.clone(), list.iter().take(depth).cloned().collect()))
                .collect(),
        }
    }

    pub fn to_trec(&self) -> String {
        let mut out = String::new();
        for (qid, list) in &self.queries {
            for (i, (pid, score)) in list.iter().enumerate() {
                writeln!(out, "{qid} Q0 {pid} {} {score:.6} {}", i + 1, self.tag).unwrap();
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_trec()).map_err(|e| Error::io(path, e))
    }

    /// Parses `query_id Q0 passage_id rank score run_tag` lines. Ranks must
    /// be contiguous from 1 and passage ids unique per query.
    pub fn read(path: &Path) -> Result<Run> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut run = Run::default();
        let mut seen: HashMap<String, HashSet<String>> = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let bad = |message: String| Error::RunFormat {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != 6 {
                return Err(bad(format!("expected 6 fields, found {}", fields.len())));
            }
            let rank: usize = fields[3].parse().map_err(|_| bad(format!("bad rank {:?}", fields[3])))?;
            let score: f64 = fields[4].parse().map_err(|_| bad(format!("bad score {:?}", fields[4])))?;
            let list = run.queries.entry(fields[0].to_string()).or_default();
            if rank != list.len() + 1 {
                return Err(bad(format!("rank {rank} is not contiguous for query {}", fields[0])));
            }
            if !seen.entry(fields[0].to_string()).or_default().insert(fields[2].to_string()) {
                return Err(bad(format!("duplicate passage {} for query {}", fields[2], fields[0])));
            }
            list.push((fields[2].to_string(), score));
            run.tag = fields[5].to_string();
        }
        Ok(run)
    }
}

pub fn qrels_to_string(qrels: &Qrels) -> String {
    let mut out = String::new();
    for (qid, rels) in qrels {
        for (pid, grade) in rels {
            writeln!(out, "{qid} 0 {pid} {grade}").unwrap();
        }
    }
    out
}

pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<()> {
    std::fs::write(path, qrels_to_string(qrels)).map_err(|e| Error::io(path, e))
}

/// Parses `query_id 0 passage_id grade` lines.
pub fn read_qrels(path: &Path) -> Result<Qrels> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut qrels = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |message: String| Error::RunFormat {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        }
        let grade: u32 = fields[3].parse().map_err(|_| bad(format!("bad grade {:?}", fields[3])))?;
        qrels
            .entry(fields[0].to_string())
            .or_default()
            .insert(fields[2].to_string(), grade);
    }
    Ok(qrels)
}

fn relevant_set(rels: &BTreeMap<String, u32>) -> HashSet<&str> {
    rels.iter().filter(|(_, &g)| g > 0).map(|(p, _)| p.as_str()).collect()
}

/// 1-based rank of the first relevant passage of a query, if retrieved.
fn first_relevant(run: &Run, qid: &str, relevant: &HashSet<&str>) -> Option<usize> {
    run.queries
        .get(qid)?
        .iter()
        .position(|(pid, _)| relevant.contains(pid.as_str()))
        .map(|i| i + 1)
}

fn reciprocal_rank(run: &Run, qid: &str, rels: &BTreeMap<String, u32>) -> f64 {
    first_relevant(run, qid, &relevant_set(rels)).map_or(0.0, |r| 1.0 / r as f64)
}

fn hit_at(run: &Run, qid: &str, rels: &BTreeMap<String, u32>, k: usize) -> f64 {
    match first_relevant(run, qid, &relevant_set(rels)) {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    }
}

/// `None` when the query has no relevant passage.
fn ndcg3(run: &Run, qid: &str, rels: &BTreeMap<String, u32>) -> Option<f64> {
    let relevant = relevant_set(rels);
    if relevant.is_empty() {
        return None;
    }
    let discount = |i: usize| 1.0 / ((i + 1) as f64).log2();
    let dcg: f64 = run
        .queries
        .get(qid)
        .map(|list| {
            list.iter()
                .take(3)
                .enumerate()
                .filter(|(_, (pid, _))| relevant.contains(pid.as_str()))
                .map(|(i, _)| discount(i + 1))
                .sum()
        })
        .unwrap_or(0.0);
    let ideal: f64 = (1..=relevant.len().min(3)).map(discount).sum();
    Some(dcg / ideal)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean reciprocal rank over the qrels queries.
pub fn mrr(run: &Run, qrels: &Qrels) -> Result<f64> {
    mean(qrels.iter().map(|(q, rels)| reciprocal_rank(run, q, rels))).ok_or(Error::EmptyQrels)
}

/// Mean NDCG@3; queries without relevant passages are skipped.
pub fn ndcg_at_3(run: &Run, qrels: &Qrels) -> Result<f64> {
    if qrels.is_empty() {
        return Err(Error::EmptyQrels);
    }
    let skipped = qrels.values().filter(|r| relevant_set(r).is_empty()).count();
    if skipped > 0 {
        log::warn!("{skipped} quer(ies) without relevant passages excluded from NDCG@3");
    }
    Ok(mean(qrels.iter().filter_map(|(q, rels)| ndcg3(run, q, rels))).unwrap_or(0.0))
}

/// Fraction of queries with a relevant passage in the top `k`.
pub fn recall_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<f64> {
    mean(qrels.iter().map(|(q, rels)| hit_at(run, q, rels, k))).ok_or(Error::EmptyQrels)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    pub mrr: f64,
    pub ndcg_at_3: f64,
    pub recall_at_10: f64,
    pub recall_at_100: f64,
}

impl MetricSet {
    pub fn compute(run: &Run, qrels: &Qrels) -> Result<Self> {
        Ok(Self {
            mrr: mrr(run, qrels)?,
            ndcg_at_3: ndcg_at_3(run, qrels)?,
            recall_at_10: recall_at_k(run, qrels, 10)?,
            recall_at_100: recall_at_k(run, qrels, 100)?,
        })
    }

    pub fn values(&self) -> [f64; 4] {
        [self.mrr, self.ndcg_at_3, self.recall_at_10, self.recall_at_100]
    }

    /// Percentages rounded to one decimal, as shown in tables.
    pub fn scaled(&self) -> Self {
        let s = |v: f64| (v * 1000.0).round() / 10.0;
        Self {
            mrr: s(self.mrr),
            ndcg_at_3: s(self.ndcg_at_3),
            recall_at_10: s(self.recall_at_10),
            recall_at_100: s(self.recall_at_100),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub n: usize,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run: String,
    pub overall: SegmentMetrics,
    pub segments: BTreeMap<TurnType, SegmentMetrics>,
}

impl EvalReport {
    /// Same report with every metric scaled to a one-decimal percentage.
    pub fn scaled(&self) -> Self {
        let scale = |s: &SegmentMetrics| SegmentMetrics {
            n: s.n,
            metrics: s.metrics.scaled(),
        };
        Self {
            run: self.run.clone(),
            overall: scale(&self.overall),
            segments: self.segments.iter().map(|(k, v)| (*k, scale(v))).collect(),
        }
    }
}

/// Computes MRR, NDCG@3, R@10 and R@100 overall and per turn type.
pub fn evaluate_run(run: &Run, qrels: &Qrels, classes: &HashMap<String, TurnType>) -> Result<EvalReport> {
    let missing: Vec<String> = qrels.keys().filter(|q| !classes.contains_key(*q)).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingClass(missing));
    }
    let overall = SegmentMetrics {
        n: qrels.len(),
        metrics: MetricSet::compute(run, qrels)?,
    };
    let mut segments = BTreeMap::new();
    for ty in TurnType::ALL {
        let subset: Qrels = qrels
            .iter()
            .filter(|(q, _)| classes[*q] == ty)
            .map(|(q, r)| (q.clone(), r.clone()))
            .collect();
        let metrics = if subset.is_empty() {
            MetricSet::default()
        } else {
            MetricSet::compute(run, &subset)?
        };
        segments.insert(ty, SegmentMetrics { n: subset.len(), metrics });
    }
    Ok(EvalReport {
        run: run.tag.clone(),
        overall,
        segments,
    })
}

/// Aligned text table: one block per run, one row per segment.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    writeln!(out, "{:<28} {:<13} {:>5} {:>6} {:>6} {:>6} {:>6}", "Run", "Segment", "n", "MRR", "NDCG", "R@10", "R@100").unwrap();
    writeln!(out, "{}", "-".repeat(76)).unwrap();
    for report in reports {
        let mut rows: Vec<(&str, &SegmentMetrics)> =
            report.segments.iter().map(|(k, v)| (k.label(), v)).collect();
        rows.push(("Overall", &report.overall));
        for (label, seg) in rows {
            let m = seg.metrics;
            writeln!(
                out,
                "{:<28} {:<13} {:>5} {:>6.1} {:>6.1} {:>6.1} {:>6.1}",
                report.run,
                label,
                seg.n,
                m.mrr * 100.0,
                m.ndcg_at_3 * 100.0,
                m.recall_at_10 * 100.0,
                m.recall_at_100 * 100.0
            )
            .unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_with(qid: &str, gold_at: usize, depth: usize) -> Run {
        let mut run = Run::new("t");
        let list = (1..=depth)
            .map(|i| (if i == gold_at { "gold".to_string() } else { format!("x{i}") }, 1.0 / i as f64))
            .collect();
        run.queries.insert(qid.into(), list);
        run
    }

    fn qrels(qids: &[&str]) -> Qrels {
        qids.iter()
            .map(|q| (q.to_string(), BTreeMap::from([("gold".to_string(), 1)])))
            .collect()
    }

    #[test]
    fn rank_three() {
        let run = run_with("q", 3, 20);
        let qr = qrels(&["q"]);
        assert_eq!(mrr(&run, &qr).unwrap(), 1.0 / 3.0);
        assert_eq!(ndcg_at_3(&run, &qr).unwrap(), 0.5);
    }

    #[test]
    fn rank_one_and_five() {
        assert_eq!(ndcg_at_3(&run_with("q", 1, 5), &qrels(&["q"])).unwrap(), 1.0);
        assert_eq!(ndcg_at_3(&run_with("q", 5, 5), &qrels(&["q"])).unwrap(), 0.0);
    }

    #[test]
    fn mrr_with_missing_query() {
        let run = run_with("q1", 2, 5);
        assert_eq!(mrr(&run, &qrels(&["q1", "q2"])).unwrap(), 0.25);
        assert!(matches!(mrr(&run, &Qrels::new()), Err(Error::EmptyQrels)));
    }

    #[test]
    fn recall_boundaries() {
        assert_eq!(recall_at_k(&run_with("q", 10, 20), &qrels(&["q"]), 10).unwrap(), 1.0);
        assert_eq!(recall_at_k(&run_with("q", 11, 20), &qrels(&["q"]), 10).unwrap(), 0.0);
    }

    #[test]
    fn ndcg_skips_queries_without_relevance() {
        let mut qr = qrels(&["q"]);
        qr.insert("empty".into(), BTreeMap::from([("p".to_string(), 0)]));
        assert_eq!(ndcg_at_3(&run_with("q", 1, 3), &qr).unwrap(), 1.0);
    }

    #[test]
    fn segments_recombine() {
        let mut run = Run::new("t");
        run.queries.extend(run_with("a", 1, 10).queries);
        run.queries.extend(run_with("b", 4, 10).queries);
        run.queries.extend(run_with("c", 12, 20).queries);
        let qr = qrels(&["a", "b", "c"]);
        let classes = HashMap::from([
            ("a".to_string(), TurnType::First),
            ("b".to_string(), TurnType::TopicShifted),
            ("c".to_string(), TurnType::TopicShifted),
        ]);
        let report = evaluate_run(&run, &qr, &classes).unwrap();
        for i in 0..4 {
            let weighted: f64 = report
                .segments
                .values()
                .map(|s| s.metrics.values()[i] * s.n as f64)
                .sum::<f64>()
                / 3.0;
            assert!((weighted - report.overall.metrics.values()[i]).abs() < 1e-12);
        }
        assert_eq!(report.segments[&TurnType::TopicConcentrated].n, 0);
        let mut partial = classes.clone();
        partial.remove("c");
        assert!(matches!(evaluate_run(&run, &qr, &partial), Err(Error::MissingClass(ids)) if ids == ["c"]));
    }

    #[test]
    fn perfect_first_turns() {
        let mut run = Run::new("t");
        run.queries.extend(run_with("a", 1, 3).queries);
        run.queries.extend(run_with("b", 1, 3).queries);
        let classes = HashMap::from([("a".to_string(), TurnType::First), ("b".to_string(), TurnType::First)]);
        let report = evaluate_run(&run, &qrels(&["a", "b"]), &classes).unwrap().scaled();
        let first = report.segments[&TurnType::First].metrics;
        assert_eq!(first.values(), [100.0; 4]);
    }

    #[test]
    fn trec_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.trec");
        let run = run_with("q_1", 2, 4);
        run.write(&path).unwrap();
        let back = Run::read(&path).unwrap();
        assert_eq!(back.tag, "t");
        assert_eq!(back.queries["q_1"].len(), 4);
        assert_eq!(back.queries["q_1"][1].0, "gold");

        std::fs::write(&path, "q Q0 p 2 1.0 t\n").unwrap();
        assert!(matches!(Run::read(&path), Err(Error::RunFormat { line: 1, .. })));
        std::fs::write(&path, "q Q0 p 1 1.0 t\nq Q0 p 2 0.5 t\n").unwrap();
        assert!(Run::read(&path).is_err());

        let qpath = dir.path().join("qrels");
        let qr = qrels(&["q_1", "q_2"]);
        write_qrels(&qpath, &qr).unwrap();
        assert_eq!(read_qrels(&qpath).unwrap(), qr);
    }
}
