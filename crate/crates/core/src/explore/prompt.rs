//! Prompt templates for the three exploration methods and the pairwise judge.
//!
//! Each exploration prompt is an instruction, an output-format line, a
//! one-shot demonstration and the test instance.

use super::judge::Criterion;
use super::PromptMethod;
use crate::conversation::ContextString;

const SEPARATOR: &str = "---";

const DEMO_CONVERSATION: &str = "Q1: How did religion effect their society? A1: Religion held ancient Hawaiian society together, affecting habits, lifestyles, work methods, social policy and law. The legal system was based on religious kapu, or taboos.
Q2: What is Kapu? A2: Kapu is the ancient Hawaiian code of conduct of laws and regulations.
...
Q4: What are the beginnings of the kapu system like? A4: The rigidity of the kapu system might have come from a second wave of migrations in 1000–1300 from which different religions and systems were shared";

const DEMO_QUESTION: &str = "How did this wave effect society or the system?";

const DEMO_REWRITES: &str = "Rewrite 1: How did the second wave of migrations between 1000–1300 impact ancient Hawaiian society or the kapu system?
Rewrite 2: In what ways were the social structure or kapu system of ancient Hawaii influenced by migrations from 1000 to 1300?
Rewrite 3: ...";

const DEMO_PLANS: &str = "Info 1: Migration Impact - Information about how the second wave of migrations influenced the existing societal structures or introduced changes in ancient Hawaiian society.
Rewrite 1: How did the second wave of migrations around 1000-1300 AD affect ancient Hawaiian society and its structures?

Info 2: Changes to Kapu System - Details regarding any modifications or introductions to the kapu system as a result of the second wave of migrations.
Rewrite 2: What changes were made to the ancient Hawaiian kapu system due to the second wave of migrations?

Info 3: ...";

const DEMO_ANSWERS: &str = "Answer 1: The second wave of migrations brought new religious beliefs and practices, which likely intensified the existing kapu system and introduced additional taboos.
Answer 2: The influx of migrants during this period could have led to the formalization and expansion of the kapu system, as new ideas were integrated and enforced.
Answer 3: ...";

fn instruction(method: PromptMethod, n: usize) -> String {
    match method {
        PromptMethod::QuestionRewriting => format!(
            "Given a question and its context, decontextualize the question by addressing coreference and omission issues. \
             The resulting question should retain its original meaning and be as informative as possible, \
             and should not duplicate any previously asked questions in the context. \
             Please give me a list of {n} candidates for the rewrite. Here are some examples."
        ),
        PromptMethod::Planning => format!(
            "I am working on finding information to rewrite the question. Given a question and its context, \
             Please provide {n} information-Rewrite pairs, where each pair consists of information that might be needed \
             to answer the question and a rewritten question. the rewritten question is a decontextualized version of the \
             question by addressing coreference and omission issues with respect to each information. \
             the resulting question should retain its original search intent. Here are some examples."
        ),
        PromptMethod::QueryExpansion => format!(
            "Please give me a list of {n} answer candidates based on the given conversation context and question. \
             Here are some examples."
        ),
    }
}

fn format_instruction(method: PromptMethod, n: usize) -> String {
    let head = "Follow the following format.\n\n\
                Conversation:\n${conversational context for the question}\n\n\
                Question: ${follow-up question to be rewritten}\n\n";
    let tail = match method {
        PromptMethod::QuestionRewriting => format!(
            "Rewrite: ${{list of {n} rewritten question candidates, each on a new line.}}\n\
             Rewrite i: ${{(i)-th rewritten question that address coreference and omission issues}}"
        ),
        PromptMethod::Planning => format!(
            "Information-Rewrite: ${{list of {n} Information-Rewrite pairs, each on a new line}}\n\
             Info i: ${{(i)-th information that is needed to answer the question. it should not be too specific}}\n\
             Rewrite i: ${{(i)-th rewritten question that address coreference and omission issues with respect to (i)-th information.}}"
        ),
        PromptMethod::QueryExpansion => format!(
            "Answer: ${{list of {n} answer candidates, each on a new line.}}\n\
             Answer i: ${{(i)-th answer for the current question}}"
        ),
    };
    format!("{head}{tail}")
}

pub(crate) fn output_header(method: PromptMethod) -> &'static str {
    match method {
        PromptMethod::QuestionRewriting => "Rewrite:",
        PromptMethod::Planning => "Information-Rewrite:",
        PromptMethod::QueryExpansion => "Answer:",
    }
}

fn instance(conversation: &str, question: &str) -> String {
    format!("Conversation:\n{conversation}\n\nQuestion: {question}")
}

/// Renders the exploration prompt requesting `n` items.
pub fn build_prompt(method: PromptMethod, context: &ContextString, question: &str, n: usize) -> String {
    let demo_output = match method {
        PromptMethod::QuestionRewriting => DEMO_REWRITES,
        PromptMethod::Planning => DEMO_PLANS,
        PromptMethod::QueryExpansion => DEMO_ANSWERS,
    };
    let header = output_header(method);
    [
        instruction(method, n),
        SEPARATOR.to_string(),
        format_instruction(method, n),
        SEPARATOR.to_string(),
        format!("{}\n\n{header}\n{demo_output}", instance(DEMO_CONVERSATION, DEMO_QUESTION)),
        SEPARATOR.to_string(),
        format!("{}\n\n{header}", instance(context.as_str(), question)),
    ]
    .join("\n\n")
}

/// Pairwise judge prompt; `query_a` is shown first.
pub fn build_judge_prompt(criterion: Criterion, conversation: &str, query_a: &str, query_b: &str) -> String {
    let (name, check) = match criterion {
        Criterion::Clarity => (
            "clarity",
            "which question is less open to multiple interpretations and has a more clear intention.",
        ),
        Criterion::Conciseness => (
            "conciseness",
            "which question is more brief and directly states the search intent without additional elaboration.",
        ),
        Criterion::Informativeness => (
            "informativeness",
            "which question provides more useful and relevant information.",
        ),
    };
    format!(
        "[Instruction]\n\
         Please act as an impartial judge and evaluate the quality of the query-rewriting system displayed below. \
         The system tries to rewrite the conversational input to a stand-alone question, eliminating dependency on the conversational context.\n\n\
         Your job is to compare the {name} of the two rewritten stand-alone questions.\n\
         That is, You should check {check}\n\
         Please choose either 'A' or 'B'. If the two questions show the same {name}, answer it by 'Tie'. For example, Judge: (A|B|Tie)\n\n\
         [Conversation]\n{conversation}\n\n\
         [The Start of stand-alone question A]\n{query_a}\n[The End of stand-alone question A]\n\n\
         [The Start of stand-alone question B]\n{query_b}\n[The End of stand-alone question B]\n\n\
         Judge:"
    )
}
