//! Line-oriented parsing of model responses.

use std::collections::HashSet;

use super::judge::Verdict;
use super::PromptMethod;
use crate::error::{Error, Result};

/// Whitespace-collapsed, case-folded form used for exact-duplicate checks.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Returns the payload of a `"{label} <int>: payload"` line.
fn labeled<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let rest = line.trim().strip_prefix(label)?.strip_prefix(' ')?;
    let digits = rest.len() - rest.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    let payload = rest[digits..].strip_prefix(':')?.trim();
    (!payload.is_empty()).then_some(payload)
}

/// Extracts the items of a response in first-seen order.
///
/// Rewriting and planning responses yield rewrites (`Rewrite i:`; planning
/// `Info i:` lines are dropped). Expansion responses yield pseudo-answers
/// (`Answer i:`). Other lines are skipped and exact duplicates removed.
pub fn parse_candidates(raw: &str, method: PromptMethod) -> Result<Vec<String>> {
    let label = match method {
        PromptMethod::QuestionRewriting | PromptMethod::Planning => "Rewrite",
        PromptMethod::QueryExpansion => "Answer",
    };
    let mut seen = HashSet::new();
    let items: Vec<String> = raw
        .lines()
        .filter_map(|line| labeled(line, label))
        .filter(|item| seen.insert(normalize(item)))
        .map(str::to_string)
        .collect();
    if items.is_empty() {
        return Err(Error::ParseEmpty {
            raw: raw.to_string(),
            context: None,
        });
    }
    Ok(items)
}

/// Reads the verdict from the last `Judge:` line. A bare `A`, `B` or `Tie`
/// response is also accepted since the prompt already ends with `Judge:`.
pub fn parse_verdict(raw: &str) -> Result<Verdict> {
    let candidate = raw
        .lines()
        .rev()
        .find_map(|l| l.find("Judge:").map(|i| &l[i + "Judge:".len()..]))
        .unwrap_or(raw);
    let token = candidate
        .trim()
        .trim_matches(|c: char| matches!(c, '(' | ')' | '[' | ']' | '\'' | '"' | '.' | '*' | ' '));
    match token.to_ascii_lowercase().as_str() {
        "a" => Ok(Verdict::A),
        "b" => Ok(Verdict::B),
        "tie" => Ok(Verdict::Tie),
        _ => Err(Error::JudgeParse { raw: raw.to_string() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rewrites() {
        let out = parse_candidates("Rewrite 1: A\nRewrite 2: B", PromptMethod::QuestionRewriting).unwrap();
        assert_eq!(out, ["A", "B"]);
    }

    #[test]
    fn planning_drops_info_lines() {
        let out = parse_candidates("Info 1: i\nRewrite 1: A", PromptMethod::Planning).unwrap();
        assert_eq!(out, ["A"]);
    }

    #[test]
    fn noise_and_duplicates() {
        let out = parse_candidates("Rewrite 1: A\nnoise\nRewrite 2: A", PromptMethod::QuestionRewriting).unwrap();
        assert_eq!(out, ["A"]);
        let out = parse_candidates(
            "Rewrite 1: Who  is X?\nRewrite 2: who is x?\nRewrite: missing\nRewrite x: bad\nRewrite 3:\n  Rewrite 4: Y",
            PromptMethod::QuestionRewriting,
        )
        .unwrap();
        assert_eq!(out, ["Who  is X?", "Y"]);
    }

    #[test]
    fn expansion_answers() {
        let out = parse_candidates("Answer 1: foo\nRewrite 1: bar\nAnswer 2: baz", PromptMethod::QueryExpansion).unwrap();
        assert_eq!(out, ["foo", "baz"]);
    }

    #[test]
    fn empty_parse_carries_raw() {
        let err = parse_candidates("nothing here", PromptMethod::QuestionRewriting).unwrap_err();
        assert!(matches!(err, Error::ParseEmpty { raw, .. } if raw == "nothing here"));
    }

    #[test]
    fn verdicts() {
        assert_eq!(parse_verdict("Judge: A").unwrap(), Verdict::A);
        assert_eq!(parse_verdict("reasoning...\nJudge: (b)").unwrap(), Verdict::B);
        assert_eq!(parse_verdict("Judge: A\nJudge: TIE").unwrap(), Verdict::Tie);
        assert_eq!(parse_verdict(" tie ").unwrap(), Verdict::Tie);
        assert!(matches!(parse_verdict("Judge: maybe"), Err(Error::JudgeParse { .. })));
        assert!(parse_verdict("I think the first").is_err());
    }
}
