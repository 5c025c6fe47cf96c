//! Retriever feedback: every candidate rewrite is run through the frozen
//! retriever and tagged with the rank of its turn's gold passage.

use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conversation::{Conversation, Turn};
use crate::error::{Error, Result};
use crate::explore::{PromptMethod, RewriteCandidate};
use crate::index::{gold_rank, Rank, Retriever};

/// Where a scored query came from. Baselines are scored for evaluation
/// tables only and never enter preference construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuerySource {
    #[serde(rename = "question_rewriting")]
    QuestionRewriting,
    #[serde(rename = "planning")]
    Planning,
    #[serde(rename = "query_expansion")]
    QueryExpansion,
    #[serde(rename = "baseline:original")]
    BaselineOriginal,
    #[serde(rename = "baseline:human")]
    BaselineHuman,
}

impl QuerySource {
    pub fn prompt_method(self) -> Option<PromptMethod> {
        match self {
            Self::QuestionRewriting => Some(PromptMethod::QuestionRewriting),
            Self::Planning => Some(PromptMethod::Planning),
            Self::QueryExpansion => Some(PromptMethod::QueryExpansion),
            Self::BaselineOriginal | Self::BaselineHuman => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::QuestionRewriting => "question_rewriting",
            Self::Planning => "planning",
            Self::QueryExpansion => "query_expansion",
            Self::BaselineOriginal => "baseline:original",
            Self::BaselineHuman => "baseline:human",
        }
    }
}

impl From<PromptMethod> for QuerySource {
    fn from(m: PromptMethod) -> Self {
        match m {
            PromptMethod::QuestionRewriting => Self::QuestionRewriting,
            PromptMethod::Planning => Self::Planning,
            PromptMethod::QueryExpansion => Self::QueryExpansion,
        }
    }
}

impl fmt::Display for QuerySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub conv_id: String,
    pub turn_id: u32,
    pub method: QuerySource,
    pub rewrite: String,
    pub pseudo_answer: Option<String>,
    pub candidate_idx: u32,
    /// Absent when the gold passage is not in the top `top_k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<u32>,
    pub retriever_profile: String,
    pub top_k: usize,
}

impl FeedbackRecord {
    pub fn rank(&self) -> Rank {
        Rank::from_option(self.rank)
    }

    fn sort_key(&self) -> (&str, u32, QuerySource, u32) {
        (&self.conv_id, self.turn_id, self.method, self.candidate_idx)
    }
}

/// A query waiting to be scored.
#[derive(Debug, Clone)]
pub struct QueryItem {
    pub conv_id: String,
    pub turn_id: u32,
    pub source: QuerySource,
    pub text: String,
    pub pseudo_answer: Option<String>,
    pub candidate_idx: u32,
}

impl From<&RewriteCandidate> for QueryItem {
    fn from(c: &RewriteCandidate) -> Self {
        Self {
            conv_id: c.conv_id.clone(),
            turn_id: c.turn_id,
            source: c.method.into(),
            text: c.rewrite.clone(),
            pseudo_answer: c.pseudo_answer.clone(),
            candidate_idx: c.candidate_idx,
        }
    }
}

/// Original question and (when present) human rewrite of every evaluable turn.
pub fn baseline_queries(conversations: &[Conversation]) -> Vec<QueryItem> {
    let mut out = Vec::new();
    for conv in conversations {
        for turn in conv.turns.iter().filter(|t| t.is_evaluable()) {
            let item = |source, text: &str| QueryItem {
                conv_id: conv.conv_id.clone(),
                turn_id: turn.turn_id,
                source,
                text: text.to_string(),
                pseudo_answer: None,
                candidate_idx: 0,
            };
            out.push(item(QuerySource::BaselineOriginal, &turn.question));
            if let Some(h) = &turn.human_rewrite {
                out.push(item(QuerySource::BaselineHuman, h));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackRun {
    pub records: Vec<FeedbackRecord>,
    /// Queries dropped because their turn has no gold passage.
    pub skipped_non_evaluable: usize,
}

pub(crate) fn turn_lookup(conversations: &[Conversation]) -> HashMap<(&str, u32), &Turn> {
    conversations
        .iter()
        .flat_map(|c| c.turns.iter().map(move |t| ((c.conv_id.as_str(), t.turn_id), t)))
        .collect()
}

/// Scores every query against the retriever. Output is sorted by
/// `(conv_id, turn_id, method, candidate_idx)` whatever the execution order.
pub fn collect_feedback(
    queries: &[QueryItem],
    conversations: &[Conversation],
    retriever: &dyn Retriever,
    top_k: usize,
) -> Result<FeedbackRun> {
    let turns = turn_lookup(conversations);
    let mut evaluable = Vec::with_capacity(queries.len());
    let mut skipped = 0;
    for q in queries {
        let turn = turns
            .get(&(q.conv_id.as_str(), q.turn_id))
            .ok_or_else(|| Error::UnknownTurn {
                conv_id: q.conv_id.clone(),
                turn_id: q.turn_id,
            })?;
        if turn.is_evaluable() {
            evaluable.push((q, *turn));
        } else {
            skipped += 1;
        }
    }
    if skipped > 0 {
        log::info!("skipped {skipped} quer(ies) on turns without gold passages");
    }
    let profile = retriever.profile_id().to_string();
    let mut records = evaluable
        .par_iter()
        .map(|(q, turn)| {
            let result = retriever.retrieve(&q.text, top_k);
            let rank = gold_rank(&result, &turn.gold_passage_ids)?;
            Ok(FeedbackRecord {
                conv_id: q.conv_id.clone(),
                turn_id: q.turn_id,
                method: q.source,
                rewrite: q.text.clone(),
                pseudo_answer: q.pseudo_answer.clone(),
                candidate_idx: q.candidate_idx,
                rank: rank.as_option(),
                retriever_profile: profile.clone(),
                top_k,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(FeedbackRun {
        records,
        skipped_non_evaluable: skipped,
    })
}

/// Groups sorted records by turn, preserving order.
pub fn group_by_turn(records: &[FeedbackRecord]) -> Vec<&[FeedbackRecord]> {
    records
        .chunk_by(|a, b| a.conv_id == b.conv_id && a.turn_id == b.turn_id)
        .collect()
}
