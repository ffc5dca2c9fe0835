//! Top-k example retrieval by token overlap or embedding cosine.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codetext::{subtokenize, TokenBag};
use crate::corpus::{CodeCommentPair, Corpus, IntentCategory};
use crate::gateway::{Embedder, GatewayError};

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm embedding")]
    ZeroVector,
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("intent `{0}` cannot be retrieved")]
    InvalidIntent(IntentCategory),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Service(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalStrategy {
    TokenBased,
    SemanticBased,
}

impl FromStr for RetrievalStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "token" | "token-based" => Ok(RetrievalStrategy::TokenBased),
            "semantic" | "semantic-based" => Ok(RetrievalStrategy::SemanticBased),
            other => Err(format!("unknown retrieval strategy `{other}`")),
        }
    }
}

/// Jaccard coefficient of two token sets. Two empty sets score 0.
pub fn token_similarity(target: &TokenBag, candidate: &TokenBag) -> f64 {
    let union = target.union_len(candidate);
    if union == 0 {
        return 0.0;
    }
    target.intersection_len(candidate) as f64 / union as f64
}

/// Cosine of the angle between two embeddings.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub fn semantic_similarity(target_emb: &[f64], candidate_emb: &[f64]) -> Result<f64, SimilarityError> {
    cosine(target_emb, candidate_emb)
}

/// A retrieved example with its similarity to the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub pair: CodeCommentPair,
    /// Position of the pair in the retrieval corpus.
    pub corpus_index: usize,
    pub sim_score: f64,
}

/// How candidates are scored against the query.
#[derive(Clone, Copy)]
pub enum Similarity<'a> {
    Token,
    Semantic { embedder: &'a dyn Embedder, model: &'a str },
}

impl Similarity<'_> {
    pub fn strategy(&self) -> RetrievalStrategy {
        match self {
            Similarity::Token => RetrievalStrategy::TokenBased,
            Similarity::Semantic { .. } => RetrievalStrategy::SemanticBased,
        }
    }
}

/// Retrieval corpus with pre-computed token bags. Immutable once built.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    pairs: Vec<CodeCommentPair>,
    bags: Vec<TokenBag>,
}

impl RetrievalIndex {
    pub fn build(corpus: &Corpus) -> Self {
        Self {
            bags: corpus.pairs.iter().map(|p| subtokenize(&p.code)).collect(),
            pairs: corpus.pairs.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[CodeCommentPair] {
        &self.pairs
    }

    /// Up to `k` same-intent candidates, best first; ties keep corpus order.
    pub fn retrieve_top_k(
        &self,
        query_code: &str,
        intent: IntentCategory,
        similarity: Similarity<'_>,
        k: usize,
    ) -> Result<Vec<Candidate>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        if !intent.is_admissible() {
            return Err(RetrievalError::InvalidIntent(intent));
        }
        let pool: Vec<usize> = (0..self.pairs.len())
            .filter(|&i| self.pairs[i].intent == intent)
            .collect();
        if pool.is_empty() {
            return Ok(Vec::new());
        }

        let scores: Vec<f64> = match similarity {
            Similarity::Token => {
                let query = subtokenize(query_code);
                pool.iter().map(|&i| token_similarity(&query, &self.bags[i])).collect()
            }
            Similarity::Semantic { embedder, model } => {
                let mut texts = Vec::with_capacity(pool.len() + 1);
                texts.push(query_code.to_string());
                texts.extend(pool.iter().map(|&i| self.pairs[i].code.clone()));
                let vectors = embedder.embed(&texts, model)?;
                let (query, rest) = vectors.split_first().expect("non-empty batch");
                rest.iter()
                    .map(|v| semantic_similarity(query, v))
                    .collect::<Result<_, _>>()?
            }
        };

        let mut ranked: Vec<(usize, f64)> = pool.into_iter().zip(scores).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        Ok(ranked
            .into_iter()
            .map(|(i, sim_score)| Candidate {
                pair: self.pairs[i].clone(),
                corpus_index: i,
                sim_score,
            })
            .collect())
    }
}

/// One-shot retrieval over a corpus. Prefer [`RetrievalIndex`] for repeated queries.
pub fn retrieve_top_k(
    query_code: &str,
    corpus: &Corpus,
    intent: IntentCategory,
    similarity: Similarity<'_>,
    k: usize,
) -> Result<Vec<Candidate>, RetrievalError> {
    RetrievalIndex::build(corpus).retrieve_top_k(query_code, intent, similarity, k)
}
