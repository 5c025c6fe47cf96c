//! Retriever-feedback collections: optimal-query sets for supervised
//! fine-tuning and binarized comparison pairs for preference optimization.
//!
//! A rank "within" a threshold means numerically at or below it, rank 1
//! being the best. `NotFound` compares worse than every found rank.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conversation::{build_context, render_prompt_input, Conversation};
use crate::error::{Error, Result};
use crate::explore::parse::normalize;
use crate::explore::PromptMethod;
use crate::feedback::{group_by_turn, FeedbackRecord};
use crate::index::Rank;
use crate::jsonl;
use crate::rng::substream;

pub const DEFAULT_OPTIMAL_THRESHOLD: u32 = 30;
pub const DEFAULT_PREFERRED_THRESHOLD: u32 = 50;
pub const DEFAULT_MAX_OPTIMAL: usize = 5;
pub const DEFAULT_MAX_PAIRS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimalQuery {
    pub rewrite: String,
    pub rank: u32,
    pub method: PromptMethod,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimalQuerySet {
    pub conv_id: String,
    pub turn_id: u32,
    pub queries: Vec<OptimalQuery>,
    /// True when no rewrite met the threshold and the best one was kept.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub conv_id: String,
    pub turn_id: u32,
    pub chosen: String,
    pub chosen_rank: u32,
    pub rejected: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected_rank: Option<u32>,
}

impl PreferencePair {
    pub fn rejected_rank(&self) -> Rank {
        Rank::from_option(self.rejected_rank)
    }
}

/// Prompt-method records of one turn, ordered best first and deduplicated
/// by normalized text (first occurrence in that order wins).
fn ranked_candidates(records: &[FeedbackRecord]) -> Vec<(Rank, PromptMethod, &FeedbackRecord)> {
    let mut items: Vec<_> = records
        .iter()
        .filter_map(|r| r.method.prompt_method().map(|m| (r.rank(), m, r)))
        .collect();
    items.sort_by(|a, b| (a.0, a.1, &a.2.rewrite).cmp(&(b.0, b.1, &b.2.rewrite)));
    let mut seen = HashSet::new();
    items.retain(|(_, _, r)| seen.insert(normalize(&r.rewrite)));
    items
}

/// Picks up to `max_n` best rewrites ranked within `optimal_threshold`.
///
/// Falls back to the single best-ranked rewrite when none qualifies, and
/// returns `None` when no rewrite retrieved the gold passage at all.
pub fn build_optimal_set(
    records: &[FeedbackRecord],
    optimal_threshold: u32,
    max_n: usize,
) -> Result<Option<OptimalQuerySet>> {
    let ranked = ranked_candidates(records);
    let Some(&(_, _, first)) = ranked.first() else {
        return Err(Error::EmptyRecords);
    };
    let to_query = |rank: u32, method: PromptMethod, r: &FeedbackRecord| OptimalQuery {
        rewrite: r.rewrite.clone(),
        rank,
        method,
    };
    let qualifying: Vec<OptimalQuery> = ranked
        .iter()
        .filter_map(|&(rank, m, r)| match rank {
            Rank::Found(k) if k <= optimal_threshold => Some(to_query(k, m, r)),
            _ => None,
        })
        .take(max_n)
        .collect();
    let (queries, fallback) = if !qualifying.is_empty() {
        (qualifying, false)
    } else {
        match ranked[0] {
            (Rank::Found(k), m, r) => (vec![to_query(k, m, r)], true),
            (Rank::NotFound, ..) => return Ok(None),
        }
    };
    Ok(Some(OptimalQuerySet {
        conv_id: first.conv_id.clone(),
        turn_id: first.turn_id,
        queries,
        fallback,
    }))
}

/// Every valid comparison for one turn, before sampling.
///
/// A pair is valid when the preferred side has a strictly better rank that
/// is within `preferred_threshold` and the two texts differ after
/// normalization. Equal ranks are never paired.
pub fn valid_pairs(records: &[FeedbackRecord], preferred_threshold: u32) -> Vec<PreferencePair> {
    let ranked = ranked_candidates(records);
    let mut out = Vec::new();
    for (i, &(wr, _, w)) in ranked.iter().enumerate() {
        let Rank::Found(w_rank) = wr else { break };
        if w_rank > preferred_threshold {
            break;
        }
        for &(lr, _, l) in &ranked[i + 1..] {
            if lr <= wr {
                continue;
            }
            out.push(PreferencePair {
                conv_id: w.conv_id.clone(),
                turn_id: w.turn_id,
                chosen: w.rewrite.clone(),
                chosen_rank: w_rank,
                rejected: l.rewrite.clone(),
                rejected_rank: lr.as_option(),
            });
        }
    }
    out
}

fn pair_order(a: &PreferencePair, b: &PreferencePair) -> std::cmp::Ordering {
    (a.chosen_rank, a.rejected_rank(), &a.chosen, &a.rejected).cmp(&(
        b.chosen_rank,
        b.rejected_rank(),
        &b.chosen,
        &b.rejected,
    ))
}

/// Samples up to `max_pairs` valid pairs uniformly without replacement
/// (`None` keeps all), then sorts them by rank and text.
pub fn build_pairs<R: Rng + ?Sized>(
    records: &[FeedbackRecord],
    preferred_threshold: u32,
    max_pairs: Option<usize>,
    rng: &mut R,
) -> Vec<PreferencePair> {
    let valid = valid_pairs(records, preferred_threshold);
    let amount = max_pairs.map_or(valid.len(), |m| m.min(valid.len()));
    let mut picked: Vec<PreferencePair> = if amount == valid.len() {
        valid
    } else {
        let mut slots: Vec<Option<PreferencePair>> = valid.into_iter().map(Some).collect();
        sample(rng, slots.len(), amount)
            .into_iter()
            .map(|i| slots[i].take().expect("indices are distinct"))
            .collect()
    };
    picked.sort_by(pair_order);
    picked
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfConfig {
    pub optimal_threshold: u32,
    pub preferred_threshold: u32,
    pub max_optimal: usize,
    pub max_pairs: Option<usize>,
    pub seed: u64,
}

impl Default for RfConfig {
    fn default() -> Self {
        Self {
            optimal_threshold: DEFAULT_OPTIMAL_THRESHOLD,
            preferred_threshold: DEFAULT_PREFERRED_THRESHOLD,
            max_optimal: DEFAULT_MAX_OPTIMAL,
            max_pairs: Some(DEFAULT_MAX_PAIRS),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RfCollection {
    pub optimal_sets: Vec<OptimalQuerySet>,
    pub pairs: Vec<PreferencePair>,
}

/// Builds both collections from a sorted feedback file. Each turn samples
/// pairs from its own sub-stream, so results do not depend on turn order.
pub fn build_rf_collection(records: &[FeedbackRecord], config: &RfConfig) -> Result<RfCollection> {
    let mut out = RfCollection::default();
    for group in group_by_turn(records) {
        if group.iter().all(|r| r.method.prompt_method().is_none()) {
            continue;
        }
        if let Some(set) = build_optimal_set(group, config.optimal_threshold, config.max_optimal)? {
            out.optimal_sets.push(set);
        }
        let key = format!("pairs/{}/{}", group[0].conv_id, group[0].turn_id);
        let mut rng = substream(config.seed, &key);
        out.pairs
            .extend(build_pairs(group, config.preferred_threshold, config.max_pairs, &mut rng));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftExample {
    pub prompt: String,
    pub completion: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpoExample {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExportSummary {
    pub n_turns: usize,
    pub n_optimal_queries: usize,
    pub n_pairs: usize,
    pub n_fallback: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExportOptions {
    pub exclude_fallback: bool,
    pub max_history_turns: Option<usize>,
}

/// Renders the SFT and DPO examples in collection order.
pub fn training_examples(
    collection: &RfCollection,
    conversations: &[Conversation],
    options: ExportOptions,
) -> Result<(Vec<SftExample>, Vec<DpoExample>, ExportSummary)> {
    let by_id: std::collections::HashMap<&str, &Conversation> =
        conversations.iter().map(|c| (c.conv_id.as_str(), c)).collect();
    let prompt_for = |conv_id: &str, turn_id: u32| -> Result<String> {
        let unknown = || Error::UnknownTurn {
            conv_id: conv_id.to_string(),
            turn_id,
        };
        let conv = by_id.get(conv_id).ok_or_else(unknown)?;
        let idx = conv.index_of(turn_id).ok_or_else(unknown)?;
        let ctx = build_context(conv, idx, options.max_history_turns)?;
        Ok(render_prompt_input(&ctx, &conv.turns[idx - 1].question))
    };

    let mut summary = ExportSummary::default();
    let mut turns = HashSet::new();
    let mut sft = Vec::new();
    for set in &collection.optimal_sets {
        if set.fallback && options.exclude_fallback {
            continue;
        }
        let prompt = prompt_for(&set.conv_id, set.turn_id)?;
        summary.n_fallback += usize::from(set.fallback);
        turns.insert((set.conv_id.as_str(), set.turn_id));
        for q in &set.queries {
            sft.push(SftExample {
                prompt: prompt.clone(),
                completion: q.rewrite.clone(),
            });
        }
    }
    let mut dpo = Vec::with_capacity(collection.pairs.len());
    for pair in &collection.pairs {
        turns.insert((pair.conv_id.as_str(), pair.turn_id));
        dpo.push(DpoExample {
            prompt: prompt_for(&pair.conv_id, pair.turn_id)?,
            chosen: pair.chosen.clone(),
            rejected: pair.rejected.clone(),
        });
    }
    summary.n_turns = turns.len();
    summary.n_optimal_queries = sft.len();
    summary.n_pairs = dpo.len();
    Ok((sft, dpo, summary))
}

/// Writes the SFT and DPO JSONL files and returns their counts.
pub fn export_training_files(
    collection: &RfCollection,
    conversations: &[Conversation],
    sft_path: &Path,
    dpo_path: &Path,
    options: ExportOptions,
) -> Result<ExportSummary> {
    let (sft, dpo, summary) = training_examples(collection, conversations, options)?;
    jsonl::write_jsonl(sft_path, &sft)?;
    jsonl::write_jsonl(dpo_path, &dpo)?;
    Ok(summary)
}
