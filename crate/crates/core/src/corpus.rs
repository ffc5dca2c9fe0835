//! Intent-labelled code/comment corpora.
//!
//! Corpora are stored as JSONL, one object per line with the fields `id`,
//! `code`, `comment`, `intent` and `split`. Records labelled `others` are
//! dropped on load; they never enter a retrieval corpus or a test set.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("record {index}: {message}")]
    Malformed { index: usize, message: String },
    #[error("record {index}: missing field `{field}`")]
    MissingField { index: usize, field: &'static str },
    #[error("record {index}: unknown intent `{value}`")]
    UnknownIntent { index: usize, value: String },
    #[error("record {index}: unknown split `{value}`")]
    UnknownSplit { index: usize, value: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("corpus `{0}` contains no records")]
    Empty(String),
    #[error("intent `{0}` cannot be used as a filter")]
    InvalidIntent(IntentCategory),
}

/// Comment intent taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntentCategory {
    What,
    Why,
    HowToUse,
    HowItIsDone,
    Property,
    Others,
}

impl IntentCategory {
    /// The five intents that take part in generation, in taxonomy order.
    pub const ADMISSIBLE: [IntentCategory; 5] = [
        IntentCategory::What,
        IntentCategory::Why,
        IntentCategory::HowToUse,
        IntentCategory::HowItIsDone,
        IntentCategory::Property,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IntentCategory::What => "what",
            IntentCategory::Why => "why",
            IntentCategory::HowToUse => "how-to-use",
            IntentCategory::HowItIsDone => "how-it-is-done",
            IntentCategory::Property => "property",
            IntentCategory::Others => "others",
        }
    }

    pub fn is_admissible(self) -> bool {
        self != IntentCategory::Others
    }
}

impl fmt::Display for IntentCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown intent `{0}`")]
pub struct ParseIntentError(pub String);

impl FromStr for IntentCategory {
    type Err = ParseIntentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "what" => Ok(IntentCategory::What),
            "why" => Ok(IntentCategory::Why),
            "how-to-use" => Ok(IntentCategory::HowToUse),
            "how-it-is-done" => Ok(IntentCategory::HowItIsDone),
            "property" => Ok(IntentCategory::Property),
            "others" => Ok(IntentCategory::Others),
            _ => Err(ParseIntentError(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl FromStr for Split {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "validation" | "valid" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusRole {
    Retrieval,
    Test,
}

impl FromStr for CorpusRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "retrieval" => Ok(CorpusRole::Retrieval),
            "test" => Ok(CorpusRole::Test),
            other => Err(format!("unknown corpus role `{other}`")),
        }
    }
}

/// One labelled example: a method body, its comment and the comment's intent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeCommentPair {
    pub id: String,
    pub code: String,
    pub comment: String,
    pub intent: IntentCategory,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub role: CorpusRole,
    pub pairs: Vec<CodeCommentPair>,
}

/// Result of [`load_corpus`]: the corpus plus how many `others` records were dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Loaded {
    pub corpus: Corpus,
    pub dropped_others: usize,
}

/// Result of [`dedup_against`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deduped {
    pub corpus: Corpus,
    pub removed: usize,
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<serde_json::Value>,
    code: Option<String>,
    comment: Option<String>,
    intent: Option<String>,
    split: Option<String>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, role: CorpusRole, pairs: Vec<CodeCommentPair>) -> Self {
        Self {
            name: name.into(),
            role,
            pairs,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CodeCommentPair> {
        self.pairs.iter()
    }

    /// Keeps only the pairs of one split, preserving order.
    pub fn with_split(&self, split: Split) -> Corpus {
        Corpus {
            name: self.name.clone(),
            role: self.role,
            pairs: self.pairs.iter().filter(|p| p.split == split).cloned().collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&CodeCommentPair> {
        self.pairs.iter().find(|p| p.id == id)
    }

    /// Writes the corpus back out as JSONL.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let io_err = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut file = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
        for pair in &self.pairs {
            let line = serde_json::to_string(pair).expect("pair serializes");
            writeln!(file, "{line}").map_err(io_err)?;
        }
        file.flush().map_err(io_err)
    }
}

/// Loads a JSONL corpus file. Records with intent `others` are dropped and counted.
pub fn load_corpus(path: &Path, role: CorpusRole) -> Result<Loaded, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    parse_corpus(&text, name, role)
}

/// Parses JSONL text. Record indices in errors are 1-based line numbers.
pub fn parse_corpus(text: &str, name: impl Into<String>, role: CorpusRole) -> Result<Loaded, CorpusError> {
    let name = name.into();
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    let mut dropped_others = 0;
    let mut records = 0;

    for (line_no, line) in text.lines().enumerate() {
        let index = line_no + 1;
        if line.trim().is_empty() {
            continue;
        }
        records += 1;
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            index,
            message: e.to_string(),
        })?;

        let id = match raw.id {
            Some(serde_json::Value::String(s)) => s,
            Some(serde_json::Value::Number(n)) => n.to_string(),
            Some(_) => {
                return Err(CorpusError::Malformed {
                    index,
                    message: "`id` must be a string or number".into(),
                })
            }
            None => return Err(CorpusError::MissingField { index, field: "id" }),
        };
        let code = raw.code.ok_or(CorpusError::MissingField { index, field: "code" })?;
        let comment = raw.comment.ok_or(CorpusError::MissingField {
            index,
            field: "comment",
        })?;
        let intent_raw = raw.intent.ok_or(CorpusError::MissingField { index, field: "intent" })?;
        let split_raw = raw.split.ok_or(CorpusError::MissingField { index, field: "split" })?;

        let intent = intent_raw
            .parse::<IntentCategory>()
            .map_err(|_| CorpusError::UnknownIntent {
                index,
                value: intent_raw.clone(),
            })?;
        let split = split_raw.parse::<Split>().map_err(|_| CorpusError::UnknownSplit {
            index,
            value: split_raw.clone(),
        })?;

        if code.trim().is_empty() {
            return Err(CorpusError::Malformed {
                index,
                message: "`code` is empty".into(),
            });
        }
        if comment.trim().is_empty() {
            return Err(CorpusError::Malformed {
                index,
                message: "`comment` is empty".into(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId(id));
        }
        if intent == IntentCategory::Others {
            dropped_others += 1;
            continue;
        }
        pairs.push(CodeCommentPair {
            id,
            code,
            comment,
            intent,
            split,
        });
    }

    if records == 0 {
        return Err(CorpusError::Empty(name));
    }
    Ok(Loaded {
        corpus: Corpus::new(name, role, pairs),
        dropped_others,
    })
}

/// Removes from `test` every pair whose trimmed comment occurs verbatim in `retrieval`.
pub fn dedup_against(test: &Corpus, retrieval: &Corpus) -> Deduped {
    let known: HashSet<&str> = retrieval.pairs.iter().map(|p| p.comment.trim()).collect();
    let pairs: Vec<CodeCommentPair> = test
        .pairs
        .iter()
        .filter(|p| !known.contains(p.comment.trim()))
        .cloned()
        .collect();
    let removed = test.pairs.len() - pairs.len();
    Deduped {
        corpus: Corpus::new(test.name.clone(), test.role, pairs),
        removed,
    }
}

/// Pairs of `corpus` with the given intent, in corpus order.
pub fn filter_by_intent(corpus: &Corpus, intent: IntentCategory) -> Result<Corpus, CorpusError> {
    if !intent.is_admissible() {
        return Err(CorpusError::InvalidIntent(intent));
    }
    Ok(Corpus::new(
        corpus.name.clone(),
        corpus.role,
        corpus.pairs.iter().filter(|p| p.intent == intent).cloned().collect(),
    ))
}

/// Counts pairs per intent.
pub fn intent_histogram(corpus: &Corpus) -> HashMap<IntentCategory, usize> {
    let mut out = HashMap::new();
    for pair in &corpus.pairs {
        *out.entry(pair.intent).or_insert(0) += 1;
    }
    out
}
