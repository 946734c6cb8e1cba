//! Offline effectiveness: nDCG@k with exponential gain.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FeatureDataset, QueryGroup};
use crate::ranker::{order_by_score, DimensionMismatch, LinearRanker};

pub const DEFAULT_CUTOFF: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("negative grade {0}")]
    NegativeGrade(i32),
    #[error("cutoff must be at least 1")]
    ZeroCutoff,
    #[error("no query in the test set has a relevant document")]
    AllSkipped,
    #[error("empty test set")]
    Empty,
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
}

fn gain(grade: i32) -> f64 {
    2f64.powi(grade) - 1.0
}

fn discount(position: usize) -> f64 {
    // 1-based position p is discounted by log2(p + 1).
    ((position + 1) as f64).log2()
}

/// `sum_{p=1}^{min(k, len)} (2^g_p - 1) / log2(p + 1)`.
pub fn dcg_at_k(grades_in_ranked_order: &[i32], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroCutoff);
    }
    if let Some(&g) = grades_in_ranked_order.iter().find(|&&g| g < 0) {
        return Err(EvalError::NegativeGrade(g));
    }
    Ok(grades_in_ranked_order
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / discount(i + 1))
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NdcgOutcome {
    Score(f64),
    /// The query has no relevant document, so nDCG is undefined.
    Skipped,
}

impl NdcgOutcome {
    pub fn score(self) -> Option<f64> {
        match self {
            Self::Score(s) => Some(s),
            Self::Skipped => None,
        }
    }
}

/// nDCG@k of the ordering induced by `scores` over `grades`.
pub fn ndcg_from_scores(scores: &[f64], grades: &[i32], k: usize) -> Result<NdcgOutcome, EvalError> {
    let ranked: Vec<i32> = order_by_score(scores).into_iter().map(|d| grades[d]).collect();
    let mut ideal = grades.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg_at_k(&ideal, k)?;
    if idcg == 0.0 {
        return Ok(NdcgOutcome::Skipped);
    }
    Ok(NdcgOutcome::Score(dcg_at_k(&ranked, k)? / idcg))
}

pub fn ndcg_at_k(ranker: &LinearRanker, group: &QueryGroup, k: usize) -> Result<NdcgOutcome, EvalError> {
    let scores = ranker.score_group(group)?;
    let grades: Vec<i32> = group.grades().iter().map(|&g| g as i32).collect();
    ndcg_from_scores(&scores, &grades, k)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean_ndcg: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Mean nDCG@10 over test queries that have at least one relevant document.
pub fn evaluate_model(ranker: &LinearRanker, test: &FeatureDataset) -> Result<EvalSummary, EvalError> {
    evaluate_model_at(ranker, test, DEFAULT_CUTOFF)
}

pub fn evaluate_model_at(ranker: &LinearRanker, test: &FeatureDataset, k: usize) -> Result<EvalSummary, EvalError> {
    if test.is_empty() {
        return Err(EvalError::Empty);
    }
    let (mut sum, mut evaluated, mut skipped) = (0.0, 0usize, 0usize);
    for q in test.queries() {
        match ndcg_at_k(ranker, q, k)? {
            NdcgOutcome::Score(s) => {
                sum += s;
                evaluated += 1;
            }
            NdcgOutcome::Skipped => skipped += 1,
        }
    }
    if evaluated == 0 {
        return Err(EvalError::AllSkipped);
    }
    Ok(EvalSummary {
        mean_ndcg: sum / evaluated as f64,
        evaluated,
        skipped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Unlearn,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Unlearn => "unlearn",
        })
    }
}

/// One point on an effectiveness trajectory. The scenario is carried by the
/// enclosing run log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub phase: Phase,
    pub round: usize,
    pub ndcg10: f64,
}
