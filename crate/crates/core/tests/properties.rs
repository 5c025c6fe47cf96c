mod common;

use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;
use qrf_core::eval::{mrr, ndcg_at_3, recall_at_k, Qrels, Run};
use qrf_core::explore::judge::Verdict;
use qrf_core::explore::parse::normalize;
use qrf_core::feedback::{FeedbackRecord, QuerySource};
use qrf_core::index::{gold_rank, Bm25Params, Passage, PassageIndex, Rank};
use qrf_core::preference::{build_optimal_set, build_pairs, valid_pairs};
use qrf_core::rng::substream;
use qrf_core::toy::{
    dpo_loss_grad, grad_check, log_softmax, quadratic_loss_grad, reference_log_probs, sequence_log_prob,
    sft_loss_grad, train, GradCheckKind, PairExample, SeqExample, ToyLMParams, TrainConfig, TrainingData,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus_strategy() -> impl Strategy<Value = (Vec<Passage>, String)> {
    let word = prop::sample::select(vec!["ab", "cd", "ef", "gh", "ij", "kl", "mn", "op"]);
    let doc = prop::collection::vec(word.clone(), 1..40).prop_map(|w| w.join(" "));
    (prop::collection::vec(doc, 1..20), prop::collection::vec(word, 1..8)).prop_map(|(docs, q)| {
        let passages = docs
            .into_iter()
            .enumerate()
            .map(|(i, text)| Passage {
                passage_id: format!("p{i:02}"),
                text,
                source_doc: "d".into(),
            })
            .collect();
        (passages, q.join(" "))
    })
}

fn feedback_strategy() -> impl Strategy<Value = Vec<FeedbackRecord>> {
    let text = prop::sample::select(vec!["a b", "A B", "c d", "e f", "g h", "i j", "k l"]);
    let rank = prop::option::weighted(0.8, 1u32..80);
    let method = prop::sample::select(vec![
        QuerySource::QuestionRewriting,
        QuerySource::Planning,
        QuerySource::QueryExpansion,
    ]);
    prop::collection::vec((method, text, rank), 1..15).prop_map(|items| {
        items
            .into_iter()
            .enumerate()
            .map(|(i, (method, text, rank))| FeedbackRecord {
                conv_id: "c".into(),
                turn_id: 2,
                method,
                rewrite: text.to_string(),
                pseudo_answer: None,
                candidate_idx: i as u32,
                rank,
                retriever_profile: "topiocqa-bm25".into(),
                top_k: 100,
            })
            .collect()
    })
}

fn toy_strategy() -> impl Strategy<Value = (ToyLMParams, Vec<SeqExample>, Vec<PairExample>)> {
    (1usize..3, 4usize..8, any::<u64>(), 0.1f64..2.0).prop_map(|(buckets, vocab, seed, scale)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ToyLMParams::random(buckets, vocab, scale, &mut rng);
        let seq = |i: u64| {
            let ids: Vec<u32> = (0..(seed.wrapping_add(i) % 5)).map(|j| 3 + ((seed >> j) % (vocab as u64 - 3)) as u32).collect();
            SeqExample::from_ids(vocab, (i as usize) % buckets, &ids)
        };
        let sft = (0..4).map(seq).collect();
        let pairs = (0..3)
            .map(|i| PairExample {
                chosen: seq(10 + i),
                rejected: seq(20 + i),
            })
            .collect();
        (params, sft, pairs)
    })
}

fn rank_key(r: Option<u32>) -> Rank {
    Rank::from_option(r)
}

proptest! {
    #![proptest_config(ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::with_cases(128)
    })]

    #[test]
    fn bm25_matches_brute_force((passages, query) in corpus_strategy(), k in 1usize..25, k1 in 0.0f64..2.0, b in 0.0f64..=1.0) {
        let params = Bm25Params::new(k1, b).unwrap();
        let index = PassageIndex::build(&passages, params).unwrap();
        let got = index.retrieve_top_k(&query, k);
        let want = common::bm25_brute_force(&passages, params, &query, k);
        prop_assert_eq!(got.entries.len(), want.len());
        for (g, (id, s)) in got.entries.iter().zip(&want) {
            prop_assert_eq!(&g.passage_id, id);
            prop_assert!(common::rel_diff(g.score, *s) <= 1e-9);
            prop_assert!(g.score > 0.0);
        }
    }

    #[test]
    fn top_k_is_a_prefix_of_deeper_lists((passages, query) in corpus_strategy(), k in 1usize..10) {
        let index = PassageIndex::build(&passages, Bm25Params::new(0.9, 0.4).unwrap()).unwrap();
        let short = index.retrieve_top_k(&query, k);
        let long = index.retrieve_top_k(&query, k + 10);
        prop_assert!(short.entries.len() <= k);
        prop_assert_eq!(&short.entries[..], &long.entries[..short.entries.len()]);
        for w in long.entries.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
    }

    #[test]
    fn gold_rank_is_first_gold_position((passages, query) in corpus_strategy(), pick in 0usize..20) {
        let index = PassageIndex::build(&passages, Bm25Params::new(0.9, 0.4).unwrap()).unwrap();
        let result = index.retrieve_top_k(&query, 100);
        let gold = vec![passages[pick % passages.len()].passage_id.clone()];
        match gold_rank(&result, &gold).unwrap() {
            Rank::Found(r) => prop_assert_eq!(&result.entries[r as usize - 1].passage_id, &gold[0]),
            Rank::NotFound => prop_assert!(result.entries.iter().all(|e| e.passage_id != gold[0])),
        }
    }

    #[test]
    fn index_round_trips_through_disk((passages, query) in corpus_strategy()) {
        let index = PassageIndex::build(&passages, Bm25Params::new(0.82, 0.68).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.bin");
        index.save(&path).unwrap();
        let loaded = PassageIndex::load(&path).unwrap();
        prop_assert_eq!(&loaded, &index);
        prop_assert_eq!(loaded.retrieve_top_k(&query, 50), index.retrieve_top_k(&query, 50));
    }

    #[test]
    fn metrics_match_oracles_and_stay_in_range(seed in any::<u64>()) {
        let inst = common::random_metric_instance(&mut ChaCha8Rng::seed_from_u64(seed));
        let (run, qrels) = (&inst.run, &inst.qrels);
        let m = mrr(run, qrels).unwrap();
        let n = ndcg_at_3(run, qrels).unwrap();
        let r10 = recall_at_k(run, qrels, 10).unwrap();
        let r100 = recall_at_k(run, qrels, 100).unwrap();
        for v in [m, n, r10, r100] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(r10 <= r100);
        prop_assert!(m <= r100 + 1e-12 || run.queries.values().any(|l| l.len() > 100));
        prop_assert!((m - common::oracle_mrr(run, qrels)).abs() <= 1e-12);
        prop_assert!((n - common::oracle_ndcg3(run, qrels)).abs() <= 1e-12);
        prop_assert!((r10 - common::oracle_recall(run, qrels, 10)).abs() <= 1e-12);
    }

    #[test]
    fn run_files_round_trip(seed in any::<u64>()) {
        let inst = common::random_metric_instance(&mut ChaCha8Rng::seed_from_u64(seed));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.trec");
        inst.run.write(&path).unwrap();
        let back = Run::read(&path).unwrap();
        let ids = |r: &Run| -> BTreeMap<String, Vec<String>> {
            r.queries.iter().filter(|(_, l)| !l.is_empty()).map(|(q, l)| (q.clone(), l.iter().map(|(p, _)| p.clone()).collect())).collect()
        };
        prop_assert_eq!(ids(&back), ids(&inst.run));
        let qpath = dir.path().join("q.txt");
        qrf_core::eval::write_qrels(&qpath, &inst.qrels).unwrap();
        let qrels: Qrels = qrf_core::eval::read_qrels(&qpath).unwrap();
        prop_assert_eq!(qrels, inst.qrels);
    }

    #[test]
    fn pairs_respect_rank_order(records in feedback_strategy(), preferred in 1u32..80, cap in prop::option::of(0usize..8), seed in any::<u64>()) {
        let pairs = build_pairs(&records, preferred, cap, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut seen = HashSet::new();
        for p in &pairs {
            prop_assert!(Rank::Found(p.chosen_rank) < p.rejected_rank());
            prop_assert!(p.chosen_rank <= preferred);
            prop_assert_ne!(normalize(&p.chosen), normalize(&p.rejected));
            prop_assert!(seen.insert((normalize(&p.chosen), normalize(&p.rejected))));
        }
        if let Some(c) = cap {
            prop_assert!(pairs.len() <= c);
        }
        let all = valid_pairs(&records, preferred);
        prop_assert!(pairs.iter().all(|p| all.contains(p)));
        if cap.is_none() {
            prop_assert_eq!(pairs.len(), all.len());
        }
    }

    #[test]
    fn optimal_sets_respect_threshold(records in feedback_strategy(), threshold in 1u32..80, max_n in 1usize..6) {
        let best = records.iter().map(|r| rank_key(r.rank)).min().unwrap();
        match build_optimal_set(&records, threshold, max_n).unwrap() {
            None => prop_assert_eq!(best, Rank::NotFound),
            Some(set) if set.fallback => {
                prop_assert_eq!(set.queries.len(), 1);
                prop_assert_eq!(Rank::Found(set.queries[0].rank), best);
                prop_assert!(set.queries[0].rank > threshold);
            }
            Some(set) => {
                prop_assert!(!set.queries.is_empty() && set.queries.len() <= max_n);
                prop_assert!(set.queries.iter().all(|q| q.rank <= threshold));
                prop_assert_eq!(Rank::Found(set.queries[0].rank), best);
            }
        }
    }

    #[test]
    fn tightening_thresholds_never_adds(records in feedback_strategy(), a in 1u32..80, b in 1u32..80) {
        let (tight, loose) = (a.min(b), a.max(b));
        let texts = |t: u32| -> HashSet<String> {
            build_optimal_set(&records, t, 5).unwrap().into_iter().flat_map(|s| s.queries).map(|q| q.rewrite).collect()
        };
        prop_assert!(texts(tight).is_subset(&texts(loose)));
        let loose_pairs = valid_pairs(&records, loose);
        prop_assert!(valid_pairs(&records, tight).iter().all(|p| loose_pairs.contains(p)));
    }

    #[test]
    fn pair_sampling_is_seeded(records in feedback_strategy(), seed in any::<u64>()) {
        let a = build_pairs(&records, 50, Some(3), &mut ChaCha8Rng::seed_from_u64(seed));
        let b = build_pairs(&records, 50, Some(3), &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn softmax_rows_sum_to_one(row in prop::collection::vec(-50.0f64..50.0, 1..30)) {
        let lp = log_softmax(Some(&row), row.len());
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(lp.iter().all(|v| *v <= 0.0));
    }

    #[test]
    fn sft_loss_is_shift_invariant_per_row((params, sft, _) in toy_strategy(), shift in -5.0f64..5.0, row in 0usize..8) {
        let (base, _) = sft_loss_grad(&params, &sft);
        let mut shifted = params.clone();
        let r = row % (params.buckets() * params.vocab_size());
        for v in shifted.row_mut(r) {
            *v += shift;
        }
        let (after, _) = sft_loss_grad(&shifted, &sft);
        prop_assert!((base - after).abs() <= 1e-9 * base.abs().max(1.0));
    }

    #[test]
    fn dpo_at_reference_is_ln2((params, _, pairs) in toy_strategy(), beta in 0.001f64..10.0) {
        let out = dpo_loss_grad(&params, &reference_log_probs(&params, &pairs), &pairs, beta);
        prop_assert!((out.loss - std::f64::consts::LN_2).abs() <= 1e-12);
        prop_assert!(out.margins.iter().all(|m| m.abs() <= 1e-12));
    }

    #[test]
    fn gradients_pass_finite_differences((params, sft, pairs) in toy_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sft_check = grad_check(GradCheckKind::Sft(&sft), &params, 40, 1e-5, &mut rng);
        prop_assert!(sft_check.max_rel_err < 1e-4, "{:?}", sft_check);
        let other = ToyLMParams::random(params.buckets(), params.vocab_size(), 1.0, &mut rng);
        let reference = reference_log_probs(&other, &pairs);
        let kind = GradCheckKind::Dpo { pairs: &pairs, reference: &reference, beta: 0.5 };
        let dpo_check = grad_check(kind, &params, 40, 1e-5, &mut rng);
        prop_assert!(dpo_check.max_rel_err < 1e-4, "{:?}", dpo_check);
    }

    #[test]
    fn verdict_reconciliation_is_order_symmetric(a in 0usize..3, b in 0usize..3) {
        let v = [Verdict::A, Verdict::B, Verdict::Tie];
        let (x, y) = (v[a], v[b]);
        // Presenting the operands the other way round mirrors the verdict.
        prop_assert_eq!(Verdict::reconcile(x, y), Verdict::reconcile(y, x).swapped());
        prop_assert_eq!(Verdict::reconcile(x, y) != Verdict::Tie, x == y.swapped() && x != Verdict::Tie);
    }
}

#[test]
fn dpo_closed_form_value() {
    // One pair whose chosen side gained 1 nat over the reference.
    let params = ToyLMParams::zeros(1, 5);
    let pair = PairExample {
        chosen: SeqExample::from_ids(5, 0, &[3]),
        rejected: SeqExample::from_ids(5, 0, &[4]),
    };
    let lw = sequence_log_prob(&params, &pair.chosen);
    let ll = sequence_log_prob(&params, &pair.rejected);
    let out = dpo_loss_grad(&params, &[(lw - 1.0, ll)], &[pair], 0.1);
    assert!((out.loss - 0.644397).abs() < 1e-6, "{}", out.loss);
    assert!((out.margins[0] - 0.1).abs() < 1e-12);
}

#[test]
fn quadratic_gradient_is_exact_to_differences() {
    let mut rng = substream(3, "quadratic");
    let params = ToyLMParams::random(2, 6, 1.0, &mut rng);
    let (_, grad) = quadratic_loss_grad(&params);
    assert!(grad.norm() > 0.0);
    let check = grad_check(GradCheckKind::Quadratic, &params, 50, 1e-5, &mut rng);
    assert!(check.max_rel_err < 1e-8, "{check:?}");
}

#[test]
fn sft_training_lowers_loss_and_dpo_widens_margins() {
    let (params, sft, pairs) = {
        let mut rng = substream(5, "toy-train");
        let params = ToyLMParams::zeros(2, 6);
        let sft: Vec<SeqExample> = (0..6).map(|i| SeqExample::from_ids(6, i % 2, &[3, 4 + (i % 2) as u32])).collect();
        let pairs: Vec<PairExample> = (0..4)
            .map(|i| PairExample {
                chosen: SeqExample::from_ids(6, i % 2, &[3, 4]),
                rejected: SeqExample::from_ids(6, i % 2, &[5, 5]),
            })
            .collect();
        let _ = &mut rng;
        (params, sft, pairs)
    };
    let mut p = params;
    let sft_cfg = TrainConfig { learning_rate: 0.01, steps: 50, beta: 0.1 };
    let records = train(&mut p, TrainingData::Sft(&sft), &sft_cfg).unwrap();
    assert!(records.windows(2).all(|w| w[1].loss <= w[0].loss));
    assert!(records.last().unwrap().loss < records[0].loss);

    let dpo_cfg = TrainConfig { learning_rate: 1.0, steps: 50, beta: 0.1 };
    let records = train(&mut p, TrainingData::Dpo(&pairs), &dpo_cfg).unwrap();
    assert!((records[0].loss - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(records.last().unwrap().mean_margin.unwrap() > 0.0);
    assert_eq!(records.last().unwrap().positive_margin_fraction, Some(1.0));
}

#[test]
fn substreams_are_independent_and_repeatable() {
    use rand::Rng;
    let a: u64 = substream(1, "x").random();
    let b: u64 = substream(1, "x").random();
    let c: u64 = substream(1, "y").random();
    let d: u64 = substream(2, "x").random();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_ne!(a, d);
}
