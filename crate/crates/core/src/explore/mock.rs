//! Deterministic offline stand-in for a chat-completion endpoint.
//!
//! The mock reads the test instance out of the prompt and emits templated
//! rewrites built from the question and words of the dialogue history. Draws
//! come from a sub-stream keyed by the seed, the method and the instance, so
//! the same prompt always yields the same text.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::client::{ChatClient, ChatRequest, ChatResponse, ClientError};
use super::judge::Criterion;
use super::PromptMethod;
use crate::rng::substream;

const PRONOUNS: &[&str] = &[
    "it", "its", "they", "them", "their", "this", "that", "he", "she", "his", "her", "these", "those",
];

const STOPWORDS: &[&str] = &[
    "the", "of", "and", "was", "in", "a", "an", "to", "with", "for", "by", "is", "are", "were", "what", "who",
    "when", "where", "why", "how", "did", "does", "do", "about", "on", "at", "as", "be", "or", "from",
];

const PREFIXES: &[&str] = &["", "", "", "tell me ", "please explain ", "i want to know "];

pub struct MockChatClient {
    seed: u64,
}

struct Instance<'a> {
    conversation: &'a str,
    question: &'a str,
}

impl MockChatClient {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

fn detect_method(prompt: &str) -> Option<PromptMethod> {
    if prompt.starts_with("Given a question and its context") {
        Some(PromptMethod::QuestionRewriting)
    } else if prompt.starts_with("I am working on finding information") {
        Some(PromptMethod::Planning)
    } else if prompt.starts_with("Please give me a list of") {
        Some(PromptMethod::QueryExpansion)
    } else {
        None
    }
}

fn requested_count(prompt: &str) -> usize {
    prompt
        .find("list of ")
        .map(|i| &prompt[i + "list of ".len()..])
        .and_then(|rest| {
            let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
            digits.parse().ok()
        })
        .unwrap_or(5)
}

fn test_instance(prompt: &str) -> Option<Instance<'_>> {
    let start = prompt.rfind("Conversation:\n")? + "Conversation:\n".len();
    let body = &prompt[start..];
    let q = body.find("\n\nQuestion: ")?;
    let question = body[q + "\n\nQuestion: ".len()..].lines().next()?;
    Some(Instance {
        conversation: &body[..q],
        question,
    })
}

fn clean(word: &str) -> &str {
    word.trim_matches(|c: char| !c.is_alphanumeric())
}

fn is_capitalized(word: &str) -> bool {
    word.chars().next().is_some_and(char::is_uppercase)
}

fn is_marker(word: &str) -> bool {
    let mut chars = word.chars();
    matches!(chars.next(), Some('Q' | 'A')) && word.len() > 2 && word.ends_with(':')
        && word[1..word.len() - 1].chars().all(|c| c.is_ascii_digit())
}

/// Longest run of capitalized words in `text`, ignoring `Q1:`/`A1:` markers.
fn entity(text: &str) -> Option<String> {
    let mut best: Vec<&str> = Vec::new();
    let mut run: Vec<&str> = Vec::new();
    for word in text.split_whitespace() {
        if is_marker(word) {
            run.clear();
            continue;
        }
        let w = clean(word);
        if !w.is_empty() && is_capitalized(w) {
            run.push(w);
            if word.ends_with(|c: char| matches!(c, '.' | ',' | '?' | '!' | ';')) {
                if run.len() > best.len() {
                    best = std::mem::take(&mut run);
                }
                run.clear();
            }
        } else {
            if run.len() > best.len() {
                best = std::mem::take(&mut run);
            }
            run.clear();
        }
    }
    if run.len() > best.len() {
        best = run;
    }
    (!best.is_empty()).then(|| best.join(" "))
}

fn content_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter(|w| !is_marker(w))
        .map(clean)
        .filter(|w| {
            let lw = w.to_lowercase();
            !w.is_empty() && !STOPWORDS.contains(&lw.as_str()) && !PRONOUNS.contains(&lw.as_str())
        })
        .map(str::to_string)
        .collect()
}

struct Material {
    question_words: Vec<String>,
    recent_entity: Option<String>,
    older_entity: Option<String>,
    recent_words: Vec<String>,
    all_words: Vec<String>,
}

impl Material {
    fn from(instance: &Instance<'_>) -> Self {
        let lines: Vec<&str> = instance.conversation.lines().filter(|l| !l.trim().is_empty()).collect();
        let recent = lines.last().copied().unwrap_or("");
        let older = lines.first().copied().unwrap_or("");
        Self {
            question_words: instance
                .question
                .split_whitespace()
                .map(|w| w.trim_end_matches(['?', '.', '!']).to_string())
                .filter(|w| !w.is_empty())
                .collect(),
            recent_entity: entity(recent).or_else(|| entity(instance.question)),
            older_entity: entity(older),
            recent_words: content_words(recent),
            all_words: content_words(instance.conversation),
        }
    }

    fn pick_entity(&self, rng: &mut ChaCha8Rng) -> Option<&str> {
        match (&self.recent_entity, &self.older_entity) {
            (Some(r), Some(o)) => Some(if rng.random_bool(0.75) { r } else { o }),
            (Some(e), None) | (None, Some(e)) => Some(e),
            (None, None) => None,
        }
    }

    fn sample_words(&self, rng: &mut ChaCha8Rng, k: usize) -> Vec<String> {
        let pool = if rng.random_bool(0.6) && !self.recent_words.is_empty() {
            &self.recent_words
        } else {
            &self.all_words
        };
        (0..k).filter_map(|_| pool.choose(rng).cloned()).collect()
    }

    fn rewrite(&self, rng: &mut ChaCha8Rng, extra: &[String]) -> String {
        let entity = self.pick_entity(rng);
        let mut words: Vec<String> = Vec::new();
        let mut resolved = false;
        for w in &self.question_words {
            let lw = w.to_lowercase();
            if PRONOUNS.contains(&lw.as_str()) {
                if let Some(e) = entity {
                    words.push(e.to_string());
                    resolved = true;
                    continue;
                }
            }
            words.push(w.clone());
        }
        if words.len() > 3 && rng.random_bool(0.15) {
            let i = rng.random_range(1..words.len());
            words.remove(i);
        }
        if !resolved {
            if let Some(e) = entity {
                let joined = words.join(" ");
                if !joined.contains(e) && rng.random_bool(0.5) {
                    words.push(format!("of {e}"));
                }
            }
        }
        words.extend(extra.iter().cloned());
        let prefix = PREFIXES.choose(rng).copied().unwrap_or("");
        format!("{prefix}{}?", words.join(" "))
    }

    fn pseudo_answer(&self, rng: &mut ChaCha8Rng) -> String {
        let mut words: Vec<String> = Vec::new();
        if let Some(e) = self.pick_entity(rng) {
            words.push(e.to_string());
        }
        let k = rng.random_range(3..9);
        words.extend(self.sample_words(rng, k));
        let q: Vec<&String> = self
            .question_words
            .iter()
            .filter(|w| !STOPWORDS.contains(&w.to_lowercase().as_str()) && !PRONOUNS.contains(&w.to_lowercase().as_str()))
            .collect();
        if let Some(w) = q.choose(rng) {
            words.push((*w).clone());
        }
        format!("{}.", words.join(" "))
    }
}

impl MockChatClient {
    fn generate(&self, method: PromptMethod, prompt: &str) -> String {
        let n = requested_count(prompt);
        let Some(instance) = test_instance(prompt) else {
            return "I could not find the question.".into();
        };
        let key = format!("mock/{}/{}\u{1f}{}", method.as_str(), instance.conversation, instance.question);
        let mut rng = substream(self.seed, &key);
        let material = Material::from(&instance);
        let mut lines = Vec::with_capacity(n);
        for i in 1..=n {
            match method {
                PromptMethod::QuestionRewriting => {
                    let k = rng.random_range(0..5);
                    let extra = material.sample_words(&mut rng, k);
                    lines.push(format!("Rewrite {i}: {}", material.rewrite(&mut rng, &extra)));
                }
                PromptMethod::Planning => {
                    let k = rng.random_range(1..5);
                    let info = material.sample_words(&mut rng, k);
                    let topic = material.pick_entity(&mut rng).unwrap_or("Topic").to_string();
                    lines.push(format!("Info {i}: {topic} - {}", info.join(" ")));
                    lines.push(format!("Rewrite {i}: {}", material.rewrite(&mut rng, &info)));
                    lines.push(String::new());
                }
                PromptMethod::QueryExpansion => {
                    lines.push(format!("Answer {i}: {}", material.pseudo_answer(&mut rng)));
                }
            }
        }
        lines.join("\n").trim_end().to_string()
    }
}

fn judge_section<'a>(prompt: &'a str, label: &str) -> &'a str {
    let start_tag = format!("[The Start of stand-alone question {label}]\n");
    let end_tag = format!("\n[The End of stand-alone question {label}]");
    prompt
        .find(&start_tag)
        .map(|s| &prompt[s + start_tag.len()..])
        .and_then(|rest| rest.find(&end_tag).map(|e| &rest[..e]))
        .unwrap_or("")
}

fn judge_score(criterion: Criterion, query: &str) -> i64 {
    let words: Vec<String> = query.split_whitespace().map(|w| clean(w).to_lowercase()).collect();
    match criterion {
        Criterion::Conciseness => -(words.len() as i64),
        Criterion::Informativeness => {
            let mut distinct: Vec<&String> = words.iter().filter(|w| !STOPWORDS.contains(&w.as_str())).collect();
            distinct.sort();
            distinct.dedup();
            distinct.len() as i64
        }
        Criterion::Clarity => -(words.iter().filter(|w| PRONOUNS.contains(&w.as_str())).count() as i64),
    }
}

fn mock_judge(prompt: &str) -> String {
    let criterion = if prompt.contains("compare the clarity") {
        Criterion::Clarity
    } else if prompt.contains("compare the conciseness") {
        Criterion::Conciseness
    } else {
        Criterion::Informativeness
    };
    let a = judge_score(criterion, judge_section(prompt, "A"));
    let b = judge_score(criterion, judge_section(prompt, "B"));
    let verdict = match a.cmp(&b) {
        std::cmp::Ordering::Greater => "A",
        std::cmp::Ordering::Less => "B",
        std::cmp::Ordering::Equal => "Tie",
    };
    format!("Judge: {verdict}")
}

impl ChatClient for MockChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ClientError> {
        let prompt = request.last_user_content();
        let content = if prompt.contains("Please act as an impartial judge") {
            mock_judge(prompt)
        } else if let Some(method) = detect_method(prompt) {
            self.generate(method, prompt)
        } else {
            return Err(ClientError::Fatal("mock client does not recognise the prompt".into()));
        };
        Ok(ChatResponse {
            content,
            finish_reason: "stop".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conversation::ContextString;
    use crate::explore::parse::parse_candidates;
    use crate::explore::prompt::{build_judge_prompt, build_prompt};

    fn ask(seed: u64, method: PromptMethod, ctx: &str, q: &str, n: usize) -> String {
        let prompt = build_prompt(method, &ContextString(ctx.into()), q, n);
        MockChatClient::new(seed)
            .complete(&ChatRequest::user("mock", prompt))
            .unwrap()
            .content
    }

    const CTX: &str = "Q1: what is Heaven Shall Burn? A1: Heaven Shall Burn is a German metalcore band from Saalfeld.";

    #[test]
    fn extracts_test_instance_not_demo() {
        let prompt = build_prompt(PromptMethod::QuestionRewriting, &ContextString(CTX.into()), "when did they form?", 10);
        let inst = test_instance(&prompt).unwrap();
        assert_eq!(inst.conversation, CTX);
        assert_eq!(inst.question, "when did they form?");
        assert_eq!(requested_count(&prompt), 10);
    }

    #[test]
    fn entity_detection() {
        assert_eq!(entity(CTX).as_deref(), Some("Heaven Shall Burn"));
        assert_eq!(entity("nothing here"), None);
    }

    #[test]
    fn outputs_parse_and_are_deterministic() {
        for method in PromptMethod::ALL {
            let n = method.default_count();
            let a = ask(7, method, CTX, "when did they form?", n);
            let b = ask(7, method, CTX, "when did they form?", n);
            assert_eq!(a, b);
            let items = parse_candidates(&a, method).unwrap();
            assert!(!items.is_empty() && items.len() <= n);
        }
        assert_ne!(
            ask(7, PromptMethod::QuestionRewriting, CTX, "when did they form?", 10),
            ask(8, PromptMethod::QuestionRewriting, CTX, "when did they form?", 10)
        );
    }

    #[test]
    fn resolves_pronouns() {
        let out = ask(1, PromptMethod::QuestionRewriting, CTX, "when did they form?", 10);
        assert!(out.contains("Heaven Shall Burn"));
    }

    #[test]
    fn judge_is_position_consistent() {
        for c in Criterion::ALL {
            let ab = mock_judge(&build_judge_prompt(c, CTX, "when did it form?", "when did Heaven Shall Burn form in Saalfeld?"));
            let ba = mock_judge(&build_judge_prompt(c, CTX, "when did Heaven Shall Burn form in Saalfeld?", "when did it form?"));
            let flip = |s: &str| s.replace('A', "x").replace('B', "A").replace('x', "B");
            assert_eq!(ab, flip(&ba), "{c:?}");
        }
    }
}
