//! Example quality, rank fusion and demonstration selection.
//!
//! Each candidate is ranked twice, once by similarity to the query and once by
//! the cosine between its own code and comment embeddings. The fused score is
//! `p * sim_rank + (1 - p) * quality_rank`; smaller is better since rank 1 is
//! the best position on both axes.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CodeCommentPair;
use crate::gateway::{Embedder, GatewayError};
use crate::retrieval::{cosine, Candidate, SimilarityError};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("quality assessment failed for `{pair_id}`: {source}")]
    Service {
        pair_id: String,
        #[source]
        source: GatewayError,
    },
    #[error("quality assessment failed for `{pair_id}`: {source}")]
    Similarity {
        pair_id: String,
        #[source]
        source: SimilarityError,
    },
    #[error("invalid selection config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityAssessment {
    pub pair_id: String,
    pub code_embedding: Vec<f64>,
    pub comment_embedding: Vec<f64>,
    pub quality_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Candidate pool size.
    pub k: usize,
    /// Number of demonstrations.
    pub f: usize,
    /// Weight of the similarity rank.
    pub p: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { k: 10, f: 3, p: 0.8 }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if self.k == 0 {
            return Err(SelectionError::Config("k must be at least 1".into()));
        }
        if self.f > self.k {
            return Err(SelectionError::Config(format!("f={} exceeds k={}", self.f, self.k)));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(SelectionError::Config(format!("p={} is outside [0, 1]", self.p)));
        }
        Ok(())
    }
}

/// Embeds code and comment with the same encoder and returns their cosine.
pub fn assess_quality(
    pair: &CodeCommentPair,
    embedder: &dyn Embedder,
    model: &str,
) -> Result<QualityAssessment, SelectionError> {
    let vectors = embedder
        .embed(&[pair.code.clone(), pair.comment.clone()], model)
        .map_err(|source| SelectionError::Service {
            pair_id: pair.id.clone(),
            source,
        })?;
    let [code_embedding, comment_embedding]: [Vec<f64>; 2] =
        vectors.try_into().map_err(|v: Vec<Vec<f64>>| SelectionError::Service {
            pair_id: pair.id.clone(),
            source: GatewayError::Protocol(format!("expected 2 embeddings, got {}", v.len())),
        })?;
    let quality_score = cosine(&code_embedding, &comment_embedding).map_err(|source| SelectionError::Similarity {
        pair_id: pair.id.clone(),
        source,
    })?;
    Ok(QualityAssessment {
        pair_id: pair.id.clone(),
        code_embedding,
        comment_embedding,
        quality_score,
    })
}

/// A retrieval candidate together with its quality score.
#[derive(Debug, Clone, PartialEq)]
pub struct RatedCandidate {
    pub candidate: Candidate,
    pub quality_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub pair: CodeCommentPair,
    pub corpus_index: usize,
    pub sim_score: f64,
    pub sim_rank: usize,
    pub quality_score: f64,
    pub quality_rank: usize,
    pub example_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Selected examples, best first.
    pub selected: Vec<ScoredExample>,
    /// Every candidate with its ranks, in input order.
    pub ranked: Vec<ScoredExample>,
    /// How many demonstrations were missing when fewer than `f` candidates existed.
    pub shortfall: usize,
}

/// 1-based ranks by descending score; `tiebreak` orders equal scores.
fn assign_ranks(scores: &[f64], tiebreak: impl Fn(usize, usize) -> Ordering) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| tiebreak(a, b)));
    let mut ranks = vec![0; scores.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = pos + 1;
    }
    ranks
}

// Fused scores are compared on a 1e-9 grid so that algebraically equal
// values (0.8*1 + 0.2*5 vs 0.8*2 + 0.2*1) tie regardless of rounding.
fn score_key(score: f64) -> i64 {
    (score * 1e9).round() as i64
}

/// Ranks candidates on both axes, fuses the ranks and keeps the best `config.f`.
pub fn fuse_and_select(candidates: &[RatedCandidate], config: &SelectionConfig) -> Selection {
    let sims: Vec<f64> = candidates.iter().map(|c| c.candidate.sim_score).collect();
    let quals: Vec<f64> = candidates.iter().map(|c| c.quality_score).collect();
    let corpus_order = |a: usize, b: usize| {
        candidates[a]
            .candidate
            .corpus_index
            .cmp(&candidates[b].candidate.corpus_index)
    };
    let sim_ranks = assign_ranks(&sims, corpus_order);
    let quality_ranks = assign_ranks(&quals, |a, b| {
        sim_ranks[a].cmp(&sim_ranks[b]).then_with(|| corpus_order(a, b))
    });

    let p = config.p;
    let ranked: Vec<ScoredExample> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| ScoredExample {
            pair: c.candidate.pair.clone(),
            corpus_index: c.candidate.corpus_index,
            sim_score: c.candidate.sim_score,
            sim_rank: sim_ranks[i],
            quality_score: c.quality_score,
            quality_rank: quality_ranks[i],
            example_score: p * sim_ranks[i] as f64 + (1.0 - p) * quality_ranks[i] as f64,
        })
        .collect();

    let mut order: Vec<usize> = (0..ranked.len()).collect();
    order.sort_by(|&a, &b| {
        score_key(ranked[a].example_score)
            .cmp(&score_key(ranked[b].example_score))
            .then(ranked[a].sim_rank.cmp(&ranked[b].sim_rank))
            .then(ranked[a].corpus_index.cmp(&ranked[b].corpus_index))
    });

    let shortfall = config.f.saturating_sub(ranked.len());
    if shortfall > 0 {
        log::warn!(
            "requested {} demonstrations but only {} candidates are available",
            config.f,
            ranked.len()
        );
    }
    let selected = order.iter().take(config.f).map(|&i| ranked[i].clone()).collect();
    Selection {
        selected,
        ranked,
        shortfall,
    }
}
