//! Intent-specific important statements from cross-encoder attention.
//!
//! The model server returns the final-layer attention over the sequence
//! `[comment tokens, intent, code tokens]` (heads averaged, special tokens
//! stripped, the intent's word pieces collapsed to one position). The
//! comment-to-code block is summed over comment rows, per-token totals are
//! pooled into their statements, and the highest-scoring statements are kept.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codetext::StatementList;
use crate::corpus::CodeCommentPair;

#[derive(Debug, Error, PartialEq)]
pub enum KnowledgeError {
    #[error("degenerate attention input: comment_len={comment_len}, code_len={code_len}")]
    Degenerate { comment_len: usize, code_len: usize },
    #[error("attention matrix must be {expected}x{expected}, got {rows}x{cols}")]
    Shape { expected: usize, rows: usize, cols: usize },
    #[error("attention entry ({row}, {col}) is {value}; entries must be finite and non-negative")]
    InvalidEntry { row: usize, col: usize, value: f64 },
    #[error("code token {token} is not aligned to a statement")]
    Unaligned { token: usize },
    #[error("no statements to extract from")]
    NoStatements,
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds from nested rows. Returns `None` for ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return None;
        }
        Some(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Final-layer attention over `[Y, I, X]` plus the code-token alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionBundle {
    pub matrix: Matrix,
    /// Number of comment tokens (K).
    pub comment_len: usize,
    /// Number of code tokens (N).
    pub code_len: usize,
    /// Statement index of each code token, indexed 0..N.
    pub code_token_statement: Vec<usize>,
}

impl AttentionBundle {
    pub fn side(&self) -> usize {
        self.comment_len + 1 + self.code_len
    }

    /// Checks shape, entry sign and alignment length.
    pub fn validate(&self) -> Result<(), KnowledgeError> {
        let side = self.side();
        if self.matrix.rows() != side || self.matrix.cols() != side {
            return Err(KnowledgeError::Shape {
                expected: side,
                rows: self.matrix.rows(),
                cols: self.matrix.cols(),
            });
        }
        for r in 0..side {
            for (c, &value) in self.matrix.row(r).iter().enumerate() {
                if !value.is_finite() || value < 0.0 {
                    return Err(KnowledgeError::InvalidEntry { row: r, col: c, value });
                }
            }
        }
        if self.code_token_statement.len() < self.code_len {
            return Err(KnowledgeError::Unaligned {
                token: self.code_token_statement.len(),
            });
        }
        Ok(())
    }
}

/// Attention from every comment token to every code token (K x N).
pub fn slice_comment_to_code(bundle: &AttentionBundle) -> Result<Matrix, KnowledgeError> {
    let (k, n) = (bundle.comment_len, bundle.code_len);
    if k == 0 || n == 0 {
        return Err(KnowledgeError::Degenerate {
            comment_len: k,
            code_len: n,
        });
    }
    bundle.validate()?;
    let first_code = k + 1;
    let mut out = Matrix::zeros(k, n);
    for r in 0..k {
        let row = bundle.matrix.row(r);
        for c in 0..n {
            out.set(r, c, row[first_code + c]);
        }
    }
    Ok(out)
}

/// How per-token totals are pooled into a statement score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatementPooling {
    #[default]
    Sum,
    Mean,
}

/// Column sums of the slice, pooled per statement.
pub fn aggregate_statement_scores(
    slice: &Matrix,
    code_token_statement: &[usize],
    statement_count: usize,
    pooling: StatementPooling,
) -> Result<Vec<f64>, KnowledgeError> {
    let mut scores = vec![0.0; statement_count];
    let mut counts = vec![0usize; statement_count];
    for token in 0..slice.cols() {
        let stmt = match code_token_statement.get(token) {
            Some(&s) if s < statement_count => s,
            _ => return Err(KnowledgeError::Unaligned { token }),
        };
        let column_total: f64 = (0..slice.rows()).map(|r| slice.get(r, token)).sum();
        scores[stmt] += column_total;
        counts[stmt] += 1;
    }
    if pooling == StatementPooling::Mean {
        for (score, &count) in scores.iter_mut().zip(&counts) {
            if count > 0 {
                *score /= count as f64;
            }
        }
    }
    Ok(scores)
}

/// How many statements to keep for a method of `L` statements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionPolicy {
    pub fraction: f64,
    pub min: usize,
    #[serde(default)]
    pub pooling: StatementPooling,
}

impl Default for ExtractionPolicy {
    fn default() -> Self {
        Self {
            fraction: 0.3,
            min: 1,
            pooling: StatementPooling::Sum,
        }
    }
}

impl ExtractionPolicy {
    /// `max(min, round(fraction * L))`, capped at `L`. Halves round away from zero.
    pub fn count(&self, statement_count: usize) -> usize {
        let q = (self.fraction * statement_count as f64).round() as usize;
        q.max(self.min).min(statement_count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImportantStatement {
    pub index: usize,
    pub score: f64,
}

/// Top `policy.count(L)` statements by attention score, ties to the smaller index.
pub fn extract_important(
    bundle: &AttentionBundle,
    statements: &StatementList,
    policy: &ExtractionPolicy,
) -> Result<Vec<ImportantStatement>, KnowledgeError> {
    if statements.is_empty() {
        return Err(KnowledgeError::NoStatements);
    }
    let slice = slice_comment_to_code(bundle)?;
    let scores = aggregate_statement_scores(&slice, &bundle.code_token_statement, statements.len(), policy.pooling)?;
    Ok(rank_statements(&scores, policy.count(statements.len())))
}

pub(crate) fn rank_statements(scores: &[f64], keep: usize) -> Vec<ImportantStatement> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .take(keep)
        .map(|index| ImportantStatement {
            index,
            score: scores[index],
        })
        .collect()
}

/// A selected example augmented with its important statements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub pair: CodeCommentPair,
    pub statements: StatementList,
    /// Sorted by score, best first.
    pub important: Vec<ImportantStatement>,
}

impl Demonstration {
    /// Source text of the important statements in ascending statement order.
    pub fn important_texts(&self) -> Vec<&str> {
        let mut idx: Vec<usize> = self.important.iter().map(|s| s.index).collect();
        idx.sort_unstable();
        idx.into_iter()
            .filter_map(|i| self.statements.get(i).map(|s| s.text.as_str()))
            .collect()
    }
}
