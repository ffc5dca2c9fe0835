//! Chain-of-thought prompt rendering and response parsing.
//!
//! A prompt has five parts, joined by single blank lines: role designation,
//! chain-of-thought instructions, worked examples, the test input and the
//! output-format constraints. The intent instruction phrase is substituted
//! into the role, the second reasoning step and the format constraints.
//! With zero shots the examples part is omitted.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::IntentCategory;
use crate::knowledge::Demonstration;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("intent `{0}` has no instruction")]
    InvalidIntent(IntentCategory),
    #[error("expected {expected} demonstrations, got {actual}")]
    Arity { expected: usize, actual: usize },
    #[error("demonstration `{0}` has no important statements")]
    IncompleteDemonstration(String),
}

#[derive(Debug, Error, PartialEq)]
#[error("response has no comment section")]
pub struct ParseError {
    pub raw: String,
}

/// Instruction phrase substituted for an intent.
pub fn instruction_phrase(intent: IntentCategory) -> Option<&'static str> {
    match intent {
        IntentCategory::What => Some("describe the functionality of"),
        IntentCategory::Why => Some("explain the reason why the method is provided or the design rationale of"),
        IntentCategory::HowToUse => Some("describe the usage or the expected set-up of using"),
        IntentCategory::HowItIsDone => Some("describe the implementation details of"),
        IntentCategory::Property => {
            Some("describe the asserted properties of the code, including pre-conditions or post-conditions of")
        }
        IntentCategory::Others => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub role_designation: String,
    pub chain_of_thought: String,
    pub examples_block: Vec<String>,
    pub input_block: String,
    pub format_constraints: String,
    pub rendered: String,
}

pub const STEP1_MARKER: &str = "# Step 1 - Important statements:";
pub const STEP2_MARKER: &str = "# Step 2 - The comment:";

// Line endings normalised, leading and trailing blank lines dropped,
// indentation kept.
pub fn normalize_code(code: &str) -> String {
    let code = code.replace("\r\n", "\n");
    let lines: Vec<&str> = code.lines().map(str::trim_end).collect();
    let first = lines.iter().position(|l| !l.is_empty()).unwrap_or(lines.len());
    let last = lines.iter().rposition(|l| !l.is_empty()).map_or(first, |i| i + 1);
    lines[first..last].join("\n")
}

fn render_demonstration(number: usize, demo: &Demonstration) -> String {
    format!(
        "# Example Code {number}:\n{code}\n{STEP1_MARKER}\n{statements}\n{STEP2_MARKER}\n{comment}",
        code = normalize_code(&demo.pair.code),
        statements = demo.important_texts().join("\n"),
        comment = demo.pair.comment.trim(),
    )
}

/// Renders the prompt for one target method. `demos` must hold exactly `shots` entries, best first.
pub fn build_prompt(
    target_code: &str,
    intent: IntentCategory,
    demos: &[Demonstration],
    shots: usize,
) -> Result<PromptBundle, PromptError> {
    let phrase = instruction_phrase(intent).ok_or(PromptError::InvalidIntent(intent))?;
    if demos.len() != shots {
        return Err(PromptError::Arity {
            expected: shots,
            actual: demos.len(),
        });
    }
    if let Some(d) = demos.iter().find(|d| d.important_texts().is_empty()) {
        return Err(PromptError::IncompleteDemonstration(d.pair.id.clone()));
    }

    let role_designation =
        format!("# You are an expert Java programmer. Give you a code snippet, your task is to {phrase} the code.");
    let chain_of_thought = format!(
        "# Based on the task itself, some of the statements in the code are more important for you to get the \
         answer, so let's solve the problem step by step:\n\
         Step 1 - extract the important statements from the code, which you should pay more attention to, in \
         order to get the answer.\n\
         Step 2 - {phrase} the code according to the code and the important statements."
    );
    let examples_block: Vec<String> = demos
        .iter()
        .enumerate()
        .map(|(i, d)| render_demonstration(i + 1, d))
        .collect();
    let input_block = format!("# For the test code:\n{}", normalize_code(target_code));
    let format_constraints = format!(
        "# Please imitate the above example, extract the most important statements of the test code and analyse \
         the code and important statements to use one sentence to {phrase} the code. Please output the results in \
         the following format:\n{STEP1_MARKER}...\n{STEP2_MARKER}..."
    );

    let mut parts: Vec<&str> = vec![&role_designation, &chain_of_thought];
    parts.extend(examples_block.iter().map(String::as_str));
    parts.push(&input_block);
    parts.push(&format_constraints);
    let rendered = parts.join("\n\n");

    Ok(PromptBundle {
        role_designation,
        chain_of_thought,
        examples_block,
        input_block,
        format_constraints,
        rendered,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub important_statements: String,
    pub comment: String,
    pub raw: String,
}

fn step1_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)#*[ \t]*step[ \t]*1[ \t]*-[ \t]*important[ \t]+statements[ \t]*:").unwrap())
}

fn step2_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)#*[ \t]*step[ \t]*2[ \t]*-[ \t]*the[ \t]+comment[ \t]*:").unwrap())
}

/// Extracts the two answer sections. The last occurrence of each marker wins.
pub fn parse_response(raw: &str) -> Result<ParsedResponse, ParseError> {
    let err = || ParseError { raw: raw.to_string() };
    let step2 = step2_re().find_iter(raw).last().ok_or_else(err)?;
    let comment = raw[step2.end()..].trim().to_string();
    if comment.is_empty() {
        return Err(err());
    }
    let important_statements = step1_re()
        .find_iter(&raw[..step2.start()])
        .last()
        .map(|m| raw[m.end()..step2.start()].trim().to_string())
        .unwrap_or_default();
    Ok(ParsedResponse {
        important_statements,
        comment,
        raw: raw.to_string(),
    })
}

/// Renders a response in the format the prompt asks for.
pub fn render_response(important_statements: &str, comment: &str) -> String {
    format!("{STEP1_MARKER}\n{important_statements}\n{STEP2_MARKER}\n{comment}")
}
