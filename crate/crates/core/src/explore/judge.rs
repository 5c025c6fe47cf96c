//! Pairwise rewrite comparison with position-bias control: every pair is
//! judged twice with the operands swapped, and disagreement becomes a tie.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::client::{complete_with_retry, ChatClient, ChatRequest, RetryPolicy};
use super::parse::parse_verdict;
use super::prompt::build_judge_prompt;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Clarity,
    Conciseness,
    Informativeness,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Self::Clarity, Self::Conciseness, Self::Informativeness];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Clarity => "clarity",
            Self::Conciseness => "conciseness",
            Self::Informativeness => "informativeness",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clarity" => Ok(Self::Clarity),
            "conciseness" => Ok(Self::Conciseness),
            "informativeness" => Ok(Self::Informativeness),
            other => Err(Error::Config {
                field: "criterion".into(),
                message: format!("unknown criterion {other:?}"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    A,
    B,
    Tie,
}

impl Verdict {
    /// Maps a verdict given on swapped operands back to the original order.
    pub fn swapped(self) -> Self {
        match self {
            Verdict::A => Verdict::B,
            Verdict::B => Verdict::A,
            Verdict::Tie => Verdict::Tie,
        }
    }

    /// Final verdict from the original-order and swapped-order judgements.
    pub fn reconcile(original: Verdict, swapped_run: Verdict) -> Verdict {
        let unswapped = swapped_run.swapped();
        if original == unswapped {
            original
        } else {
            Verdict::Tie
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::A => "A",
            Verdict::B => "B",
            Verdict::Tie => "Tie",
        })
    }
}

pub struct JudgeSettings<'a> {
    pub model: &'a str,
    pub temperature: f64,
    pub max_tokens: u32,
    pub retry: RetryPolicy,
}

fn judge_once(
    criterion: Criterion,
    conversation: &str,
    first: &str,
    second: &str,
    client: &dyn ChatClient,
    settings: &JudgeSettings<'_>,
) -> Result<Verdict> {
    let mut request = ChatRequest::user(settings.model, build_judge_prompt(criterion, conversation, first, second));
    request.temperature = settings.temperature;
    request.max_tokens = settings.max_tokens;
    let response = complete_with_retry(client, &request, &settings.retry)?;
    parse_verdict(&response.content)
}

/// Compares `rewrite_a` against `rewrite_b` under `criterion`.
pub fn judge_pair(
    criterion: Criterion,
    conversation: &str,
    rewrite_a: &str,
    rewrite_b: &str,
    client: &dyn ChatClient,
    settings: &JudgeSettings<'_>,
) -> Result<Verdict> {
    let forward = judge_once(criterion, conversation, rewrite_a, rewrite_b, client, settings)?;
    let backward = judge_once(criterion, conversation, rewrite_b, rewrite_a, client, settings)?;
    Ok(Verdict::reconcile(forward, backward))
}
