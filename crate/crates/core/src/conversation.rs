//! Conversational QA records: ingestion, context rendering and turn typing.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_id: u32,
    pub question: String,
    #[serde(default)]
    pub answer: String,
    #[serde(default)]
    pub gold_passage_ids: Vec<String>,
    #[serde(default)]
    pub human_rewrite: Option<String>,
}

impl Turn {
    /// Turns without a gold passage are kept for context but never scored.
    pub fn is_evaluable(&self) -> bool {
        !self.gold_passage_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub conv_id: String,
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| Error::InvalidConversation {
            conv_id: self.conv_id.clone(),
            message,
        };
        if self.conv_id.trim().is_empty() {
            return Err(invalid("conv_id is empty".into()));
        }
        if self.turns.is_empty() {
            return Err(invalid("conversation has no turns".into()));
        }
        let mut prev = 0;
        for turn in &self.turns {
            if turn.turn_id <= prev {
                return Err(invalid(format!(
                    "turn_id {} is not strictly increasing (previous {prev})",
                    turn.turn_id
                )));
            }
            if turn.question.trim().is_empty() {
                return Err(invalid(format!("turn {} has an empty question", turn.turn_id)));
            }
            prev = turn.turn_id;
        }
        Ok(())
    }

    /// Looks a turn up by its 1-based position.
    pub fn turn(&self, turn_index: usize) -> Result<&Turn> {
        if turn_index == 0 || turn_index > self.turns.len() {
            return Err(Error::TurnOutOfRange {
                conv_id: self.conv_id.clone(),
                index: turn_index,
                len: self.turns.len(),
            });
        }
        Ok(&self.turns[turn_index - 1])
    }

    /// Position (1-based) of the turn carrying `turn_id`.
    pub fn index_of(&self, turn_id: u32) -> Option<usize> {
        self.turns.iter().position(|t| t.turn_id == turn_id).map(|i| i + 1)
    }
}

/// Rendered dialogue history preceding a turn. The current question is not part of it.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContextString(pub String);

impl ContextString {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for ContextString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Source dataset layout. All profiles share one JSONL schema; the profile
/// only selects defaults such as the retriever parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetProfile {
    #[default]
    Generic,
    Qrecc,
    Topiocqa,
}

impl FromStr for DatasetProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generic" => Ok(Self::Generic),
            "qrecc" => Ok(Self::Qrecc),
            "topiocqa" => Ok(Self::Topiocqa),
            other => Err(Error::Config {
                field: "dataset_profile".into(),
                message: format!("unknown dataset profile {other:?}"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TurnType {
    First,
    TopicConcentrated,
    TopicShifted,
}

impl TurnType {
    pub const ALL: [TurnType; 3] = [Self::First, Self::TopicConcentrated, Self::TopicShifted];

    pub fn label(self) -> &'static str {
        match self {
            Self::First => "First",
            Self::TopicConcentrated => "Concentrated",
            Self::TopicShifted => "Shifted",
        }
    }
}

/// Loads a conversations file. Malformed lines fail with their line number;
/// a repeated `conv_id` fails naming the id.
pub fn ingest_conversations(path: &Path, profile: DatasetProfile) -> Result<Vec<Conversation>> {
    let conversations: Vec<Conversation> = jsonl::read_jsonl(path)?;
    let mut seen = HashSet::new();
    for conv in &conversations {
        conv.validate()?;
        if !seen.insert(conv.conv_id.as_str()) {
            return Err(Error::DuplicateConversation(conv.conv_id.clone()));
        }
    }
    let skipped: usize = conversations
        .iter()
        .map(|c| c.turns.iter().filter(|t| !t.is_evaluable()).count())
        .sum();
    log::info!(
        "ingested {} conversations ({profile:?}); {skipped} turn(s) lack gold passages",
        conversations.len()
    );
    Ok(conversations)
}

pub fn write_conversations(path: &Path, conversations: &[Conversation]) -> Result<()> {
    jsonl::write_jsonl(path, conversations)
}

/// Renders the history before `turn_index` as `Q{i}: .. A{i}: ..` lines.
///
/// `max_history_turns` keeps only the most recent turns; numbering always
/// follows the turn's position in the full conversation.
pub fn build_context(
    conversation: &Conversation,
    turn_index: usize,
    max_history_turns: Option<usize>,
) -> Result<ContextString> {
    conversation.turn(turn_index)?;
    let history = &conversation.turns[..turn_index - 1];
    let start = match max_history_turns {
        Some(max) => history.len().saturating_sub(max),
        None => 0,
    };
    let lines: Vec<String> = history
        .iter()
        .enumerate()
        .skip(start)
        .map(|(i, t)| format!("Q{n}: {} A{n}: {}", t.question, t.answer, n = i + 1))
        .collect();
    Ok(ContextString(lines.join("\n")))
}

/// Model input for a turn: history followed by the current question.
pub fn render_prompt_input(context: &ContextString, question: &str) -> String {
    if context.is_empty() {
        format!("Question: {question}")
    } else {
        format!("{context}\nQuestion: {question}")
    }
}

/// Classifies a turn by comparing the source document of its first gold
/// passage with that of the nearest earlier evaluable turn.
pub fn classify_turn(
    conversation: &Conversation,
    turn_index: usize,
    doc_of: &HashMap<String, String>,
) -> Result<TurnType> {
    let turn = conversation.turn(turn_index)?;
    let first_gold = turn.gold_passage_ids.first().ok_or_else(|| Error::NoGoldPassage {
        conv_id: conversation.conv_id.clone(),
        turn_id: turn.turn_id,
    })?;
    let lookup = |pid: &String| {
        doc_of
            .get(pid)
            .ok_or_else(|| Error::UnknownPassage(pid.clone()))
    };
    let current_doc = lookup(first_gold)?;
    if turn_index == 1 {
        return Ok(TurnType::First);
    }
    let previous = conversation.turns[..turn_index - 1]
        .iter()
        .rev()
        .find_map(|t| t.gold_passage_ids.first())
        .ok_or_else(|| Error::NoPreviousEvaluableTurn {
            conv_id: conversation.conv_id.clone(),
            turn_id: turn.turn_id,
        })?;
    if lookup(previous)? == current_doc {
        Ok(TurnType::TopicConcentrated)
    } else {
        Ok(TurnType::TopicShifted)
    }
}

/// Query id used in run and qrels files.
pub fn query_id(conv_id: &str, turn_id: u32) -> String {
    format!("{conv_id}_{turn_id}")
}
