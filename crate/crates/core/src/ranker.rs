//! The linear ranking model and weight-space arithmetic.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::QueryGroup;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("dimension mismatch: expected {expected}, got {actual}")]
pub struct DimensionMismatch {
    pub expected: usize,
    pub actual: usize,
}

fn check_dims(expected: usize, actual: usize) -> Result<(), DimensionMismatch> {
    if expected == actual {
        Ok(())
    } else {
        Err(DimensionMismatch { expected, actual })
    }
}

/// Scores a document as the dot product of weights and features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinearRanker {
    weights: Vec<f64>,
}

impl LinearRanker {
    pub fn zeros(num_features: usize) -> Self {
        Self {
            weights: vec![0.0; num_features],
        }
    }

    pub fn from_weights(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    pub fn score(&self, features: &[f64]) -> Result<f64, DimensionMismatch> {
        check_dims(self.dim(), features.len())?;
        Ok(dot(&self.weights, features))
    }

    /// Scores every document in `group`.
    pub fn score_group(&self, group: &QueryGroup) -> Result<Vec<f64>, DimensionMismatch> {
        check_dims(self.dim(), group.num_features())?;
        Ok(group.rows().map(|row| dot(&self.weights, row)).collect())
    }

    /// Document indices by descending score; ties keep ascending index.
    pub fn rank_descending(&self, group: &QueryGroup) -> Result<Vec<usize>, DimensionMismatch> {
        Ok(order_by_score(&self.score_group(group)?))
    }

    /// `self + delta`.
    pub fn apply(&self, delta: &ModelDelta) -> Result<Self, DimensionMismatch> {
        check_dims(self.dim(), delta.dim())?;
        Ok(Self {
            weights: self.weights.iter().zip(&delta.delta).map(|(w, d)| w + d).collect(),
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            weights: self.weights.iter().map(|w| w * factor).collect(),
        }
    }
}

/// Sorts indices by descending score with a stable sort, so equal scores keep
/// their original relative order.
pub fn order_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    order
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A difference between two models, `local - global`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelDelta {
    delta: Vec<f64>,
}

impl ModelDelta {
    pub fn zeros(dim: usize) -> Self {
        Self { delta: vec![0.0; dim] }
    }

    pub fn from_vec(delta: Vec<f64>) -> Self {
        Self { delta }
    }

    pub fn between(local: &LinearRanker, global: &LinearRanker) -> Result<Self, DimensionMismatch> {
        check_dims(global.dim(), local.dim())?;
        Ok(Self {
            delta: local.weights.iter().zip(&global.weights).map(|(l, g)| l - g).collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.delta
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.delta
    }

    pub fn dim(&self) -> usize {
        self.delta.len()
    }

    /// L2 norm.
    pub fn norm(&self) -> f64 {
        self.delta.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.delta.iter().all(|&v| v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.delta.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            delta: self.delta.iter().map(|v| v * factor).collect(),
        }
    }
}
