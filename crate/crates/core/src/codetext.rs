//! Lexical substrate shared by retrieval and knowledge augmentation.
//!
//! Identifiers are split into lowercase sub-tokens on camelCase humps,
//! underscores and letter/digit boundaries. Punctuation is discarded and the
//! contents of string and character literals are skipped. A statement is a
//! non-blank physical line that is not made of braces alone.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

/// A lowercase sub-token with the byte range of the identifier piece it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubToken {
    pub text: String,
    pub span: Range<usize>,
}

/// Set of lowercase sub-tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenBag {
    tokens: BTreeSet<String>,
}

impl TokenBag {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.tokens.contains(token)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    pub fn intersection_len(&self, other: &TokenBag) -> usize {
        self.tokens.intersection(&other.tokens).count()
    }

    pub fn union_len(&self, other: &TokenBag) -> usize {
        self.len() + other.len() - self.intersection_len(other)
    }
}

impl<S: Into<String>> FromIterator<S> for TokenBag {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self {
            tokens: iter
                .into_iter()
                .map(|s| s.into().to_lowercase())
                .filter(|s| !s.is_empty())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub index: usize,
    /// Line content with surrounding whitespace removed.
    pub text: String,
    /// 0-based physical line number in the source.
    pub line: usize,
    /// Byte range of `text` within the source.
    pub span: Range<usize>,
    /// Positions into [`lex_subtokens`] output that lie on this line.
    pub token_spans: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementList {
    pub statements: Vec<Statement>,
}

impl StatementList {
    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Statement> {
        self.statements.get(index)
    }

    /// Statement owning a byte offset, if any.
    pub fn statement_at(&self, offset: usize) -> Option<usize> {
        self.statements
            .iter()
            .find(|s| s.span.start <= offset && offset < s.span.end)
            .map(|s| s.index)
    }
}

/// Splits `code` into the ordered sequence of lowercase sub-tokens.
pub fn lex_subtokens(code: &str) -> Vec<SubToken> {
    let mut out = Vec::new();
    let mut chars = code.char_indices().peekable();

    while let Some(&(start, c)) = chars.peek() {
        if c == '"' || c == '\'' {
            chars.next();
            skip_literal(&mut chars, c);
        } else if c.is_alphanumeric() || c == '_' {
            let mut end = start;
            while let Some(&(i, ch)) = chars.peek() {
                if ch.is_alphanumeric() || ch == '_' {
                    end = i + ch.len_utf8();
                    chars.next();
                } else {
                    break;
                }
            }
            split_word(&code[start..end], start, &mut out);
        } else {
            chars.next();
        }
    }
    out
}

fn skip_literal(chars: &mut std::iter::Peekable<std::str::CharIndices<'_>>, quote: char) {
    while let Some((_, ch)) = chars.next() {
        match ch {
            '\\' => {
                chars.next();
            }
            '\n' => return,
            c if c == quote => return,
            _ => {}
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Lower,
    Upper,
    Digit,
}

fn class_of(c: char) -> Class {
    if c.is_numeric() {
        Class::Digit
    } else if c.is_uppercase() {
        Class::Upper
    } else {
        Class::Lower
    }
}

fn split_word(word: &str, base: usize, out: &mut Vec<SubToken>) {
    let mut offset = 0;
    for part in word.split('_') {
        let part_base = base + offset;
        offset += part.len() + 1;
        if part.is_empty() {
            continue;
        }
        let chars: Vec<(usize, char)> = part.char_indices().collect();
        let mut piece_start = 0;
        for k in 1..chars.len() {
            let prev = class_of(chars[k - 1].1);
            let cur = class_of(chars[k].1);
            let next = chars.get(k + 1).map(|&(_, c)| class_of(c));
            let boundary = match (prev, cur) {
                (Class::Lower, Class::Upper) => true,
                (Class::Digit, Class::Lower | Class::Upper) | (Class::Lower | Class::Upper, Class::Digit) => true,
                // "HTTPServer": split before the last capital of an acronym run
                (Class::Upper, Class::Upper) => next == Some(Class::Lower),
                _ => false,
            };
            if boundary {
                push_piece(part, piece_start, chars[k].0, part_base, out);
                piece_start = chars[k].0;
            }
        }
        push_piece(part, piece_start, part.len(), part_base, out);
    }
}

fn push_piece(part: &str, start: usize, end: usize, base: usize, out: &mut Vec<SubToken>) {
    if start < end {
        out.push(SubToken {
            text: part[start..end].to_lowercase(),
            span: base + start..base + end,
        });
    }
}

/// Deduplicated lowercase sub-tokens of `code`.
pub fn subtokenize(code: &str) -> TokenBag {
    lex_subtokens(code).into_iter().map(|t| t.text).collect()
}

fn is_brace_only(line: &str) -> bool {
    line.chars().all(|c| c == '{' || c == '}' || c.is_whitespace())
}

/// One statement per non-blank, non-brace-only line, indexed from 0.
pub fn segment_statements(code: &str) -> StatementList {
    let tokens = lex_subtokens(code);
    let mut statements = Vec::new();
    let mut line_start = 0;
    let mut next_token = 0;

    for (line_no, raw) in code.split('\n').enumerate() {
        let line_end = line_start + raw.len();
        let trimmed = raw.trim();
        if !trimmed.is_empty() && !is_brace_only(trimmed) {
            let lead = raw.len() - raw.trim_start().len();
            let span = line_start + lead..line_start + lead + trimmed.len();
            while next_token < tokens.len() && tokens[next_token].span.start < span.start {
                next_token += 1;
            }
            let mut token_spans = Vec::new();
            while next_token < tokens.len() && tokens[next_token].span.start < span.end {
                token_spans.push(next_token);
                next_token += 1;
            }
            statements.push(Statement {
                index: statements.len(),
                text: trimmed.to_string(),
                line: line_no,
                span,
                token_spans,
            });
        }
        line_start = line_end + 1;
    }
    StatementList { statements }
}
