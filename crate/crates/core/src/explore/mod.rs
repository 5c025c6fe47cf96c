//! Optimal-query exploration: prompting an LLM for candidate rewrites.

pub mod client;
pub mod judge;
pub mod mock;
pub mod parse;
pub mod prompt;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::conversation::ContextString;
use crate::error::{Error, Result};
use client::{complete_with_retry, ChatClient, ChatRequest, RetryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMethod {
    QuestionRewriting,
    Planning,
    QueryExpansion,
}

impl PromptMethod {
    pub const ALL: [PromptMethod; 3] = [Self::QuestionRewriting, Self::Planning, Self::QueryExpansion];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::QuestionRewriting => "question_rewriting",
            Self::Planning => "planning",
            Self::QueryExpansion => "query_expansion",
        }
    }

    pub fn default_count(self) -> usize {
        match self {
            Self::QuestionRewriting | Self::Planning => 10,
            Self::QueryExpansion => 5,
        }
    }
}

impl fmt::Display for PromptMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config {
                field: "method".into(),
                message: format!("unknown prompt method {s:?}"),
            })
    }
}

/// Number of items requested per method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateCounts {
    pub question_rewriting: usize,
    pub planning: usize,
    pub query_expansion: usize,
}

impl Default for CandidateCounts {
    fn default() -> Self {
        Self {
            question_rewriting: 10,
            planning: 10,
            query_expansion: 5,
        }
    }
}

impl CandidateCounts {
    pub fn get(&self, method: PromptMethod) -> usize {
        match method {
            PromptMethod::QuestionRewriting => self.question_rewriting,
            PromptMethod::Planning => self.planning,
            PromptMethod::QueryExpansion => self.query_expansion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteCandidate {
    pub conv_id: String,
    pub turn_id: u32,
    pub method: PromptMethod,
    pub rewrite: String,
    pub pseudo_answer: Option<String>,
    pub candidate_idx: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionOrder {
    #[default]
    AnswerFirst,
    RewriteFirst,
}

/// Joins a self-contained rewrite and a pseudo-answer with one newline.
pub fn compose_expanded_query(base_rewrite: &str, pseudo_answer: &str, order: ExpansionOrder) -> String {
    match order {
        ExpansionOrder::AnswerFirst => format!("{pseudo_answer}\n{base_rewrite}"),
        ExpansionOrder::RewriteFirst => format!("{base_rewrite}\n{pseudo_answer}"),
    }
}

/// Everything a prompt needs about one turn.
#[derive(Debug, Clone)]
pub struct TurnInput {
    pub conv_id: String,
    pub turn_id: u32,
    pub context: ContextString,
    pub question: String,
    /// Self-contained rewrite that expansion candidates are appended to.
    pub expansion_base: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GenerationSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub counts: CandidateCounts,
    pub retry: RetryPolicy,
    pub expansion_order: ExpansionOrder,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            model: "gpt-4-1106-preview".into(),
            temperature: client::DEFAULT_TEMPERATURE,
            max_tokens: client::DEFAULT_MAX_TOKENS,
            counts: CandidateCounts::default(),
            retry: RetryPolicy::default(),
            expansion_order: ExpansionOrder::default(),
        }
    }
}

/// One chat call for `method` on `turn`, parsed into tagged candidates.
///
/// At most `counts.get(method)` candidates are kept. Expansion candidates
/// require `turn.expansion_base`.
pub fn generate_candidates(
    turn: &TurnInput,
    method: PromptMethod,
    client: &dyn ChatClient,
    settings: &GenerationSettings,
) -> Result<Vec<RewriteCandidate>> {
    let n = settings.counts.get(method);
    let text = prompt::build_prompt(method, &turn.context, &turn.question, n);
    let mut request = ChatRequest::user(settings.model.clone(), text);
    request.temperature = settings.temperature;
    request.max_tokens = settings.max_tokens;
    let response = complete_with_retry(client, &request, &settings.retry)?;
    let mut items = parse::parse_candidates(&response.content, method).map_err(|e| match e {
        Error::ParseEmpty { raw, .. } => Error::ParseEmpty {
            raw,
            context: Some(format!("conversation {}, turn {}, {method}", turn.conv_id, turn.turn_id)),
        },
        other => other,
    })?;
    items.truncate(n);

    let candidate = |idx: usize, rewrite: String, pseudo_answer: Option<String>| RewriteCandidate {
        conv_id: turn.conv_id.clone(),
        turn_id: turn.turn_id,
        method,
        rewrite,
        pseudo_answer,
        candidate_idx: idx as u32,
    };
    let out = match method {
        PromptMethod::QueryExpansion => {
            let base = turn.expansion_base.as_deref().ok_or_else(|| Error::InvalidConversation {
                conv_id: turn.conv_id.clone(),
                message: format!("turn {} has no base rewrite for expansion", turn.turn_id),
            })?;
            items
                .into_iter()
                .enumerate()
                .map(|(i, answer)| {
                    let rewrite = compose_expanded_query(base, &answer, settings.expansion_order);
                    candidate(i, rewrite, Some(answer))
                })
                .collect()
        }
        _ => items
            .into_iter()
            .enumerate()
            .map(|(i, rewrite)| candidate(i, rewrite, None))
            .collect(),
    };
    Ok(out)
}

/// Applies `f` to every item with at most `max_in_flight` concurrent calls.
/// Results come back in input order regardless of completion order.
pub fn map_bounded<T, R, F>(items: &[T], max_in_flight: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = max_in_flight.max(1).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every slot is filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::client::{ChatResponse, ClientError};
    use super::*;

    struct Fixed(String);

    impl ChatClient for Fixed {
        fn complete(&self, _: &ChatRequest) -> std::result::Result<ChatResponse, ClientError> {
            Ok(ChatResponse {
                content: self.0.clone(),
                finish_reason: "stop".into(),
            })
        }
    }

    fn turn(base: Option<&str>) -> TurnInput {
        TurnInput {
            conv_id: "c1".into(),
            turn_id: 2,
            context: ContextString("Q1: a A1: b".into()),
            question: "what about it?".into(),
            expansion_base: base.map(str::to_string),
        }
    }

    fn settings() -> GenerationSettings {
        GenerationSettings {
            retry: RetryPolicy::no_delay(3),
            ..GenerationSettings::default()
        }
    }

    fn lines(label: &str, items: &[&str]) -> String {
        items
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{label} {}: {s}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn compose_orders() {
        assert_eq!(compose_expanded_query("Q?", "Ans.", ExpansionOrder::AnswerFirst), "Ans.\nQ?");
        assert_eq!(compose_expanded_query("Q?", "Ans.", ExpansionOrder::RewriteFirst), "Q?\nAns.");
    }

    #[test]
    fn ten_distinct_rewrites() {
        let items: Vec<String> = (0..10).map(|i| format!("rewrite number {i}")).collect();
        let refs: Vec<&str> = items.iter().map(String::as_str).collect();
        let client = Fixed(lines("Rewrite", &refs));
        let out = generate_candidates(&turn(None), PromptMethod::QuestionRewriting, &client, &settings()).unwrap();
        assert_eq!(out.len(), 10);
        assert!(out.iter().enumerate().all(|(i, c)| c.candidate_idx == i as u32 && c.pseudo_answer.is_none()));
    }

    #[test]
    fn duplicates_are_dropped() {
        let mut items: Vec<String> = (0..8).map(|i| format!("rewrite {i}")).collect();
        items.push("REWRITE 0".into());
        items.push("rewrite   3".into());
        let refs: Vec<&str> = items.iter().map(String::as_str).collect();
        let client = Fixed(lines("Rewrite", &refs));
        let out = generate_candidates(&turn(None), PromptMethod::QuestionRewriting, &client, &settings()).unwrap();
        assert_eq!(out.len(), 8);
    }

    #[test]
    fn expansion_composes_with_base() {
        let client = Fixed(lines("Answer", &["a1", "a2", "a3", "a4", "a5"]));
        let out = generate_candidates(&turn(Some("human rewrite?")), PromptMethod::QueryExpansion, &client, &settings())
            .unwrap();
        assert_eq!(out.len(), 5);
        for (i, c) in out.iter().enumerate() {
            let ans = format!("a{}", i + 1);
            assert_eq!(c.rewrite, compose_expanded_query("human rewrite?", &ans, ExpansionOrder::AnswerFirst));
            assert_eq!(c.pseudo_answer.as_deref(), Some(ans.as_str()));
        }
        assert!(generate_candidates(&turn(None), PromptMethod::QueryExpansion, &client, &settings()).is_err());
    }

    #[test]
    fn parse_empty_names_the_turn() {
        let client = Fixed("no idea".into());
        let err = generate_candidates(&turn(None), PromptMethod::QuestionRewriting, &client, &settings()).unwrap_err();
        assert!(err.to_string().contains("conversation c1, turn 2"));
    }

    #[test]
    fn bounded_map_preserves_order() {
        let items: Vec<u64> = (0..50).collect();
        let out = map_bounded(&items, 4, |&x| {
            std::thread::sleep(std::time::Duration::from_micros((50 - x) * 20));
            x * 2
        });
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(map_bounded(&Vec::<u8>::new(), 4, |&x| x).is_empty());
    }
}
