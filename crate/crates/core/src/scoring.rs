//! Numeric terms of the node acquisition value.
//!
//! ```text
//! acq(n) = F1(n) + alpha * sqrt(ln(1 + T) / (1 + t(n))) - beta * |V(n)| + gamma * feasible(n)
//! ```
//!
//! `T` counts expansion steps performed so far in the run and `t(n)` the
//! times node `n` was selected for expansion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Label;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScoringError {
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("cannot score an empty prediction vector")]
    Empty,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Fraction of positive labels predicted positive; 0 with no positives.
    pub fn tp_ratio(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Fraction of negative labels predicted negative; 0 with no negatives.
    pub fn tn_ratio(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion(predictions: &[Label], labels: &[Label]) -> Result<Confusion, ScoringError> {
    if predictions.len() != labels.len() {
        return Err(ScoringError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(ScoringError::Empty);
    }
    let mut c = Confusion::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (Label::Positive, Label::Positive) => c.tp += 1,
            (Label::Positive, Label::Negative) => c.fp += 1,
            (Label::Negative, Label::Negative) => c.tn += 1,
            (Label::Negative, Label::Positive) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Harmonic mean of precision and recall, 0 when `tp == 0`.
///
/// Computed as 2tp / (2tp + fp + fn), a single rounding of the exact
/// ratio, so equal confusions always give bit-equal scores.
pub fn f1(c: &Confusion) -> f64 {
    if c.tp == 0 {
        return 0.0;
    }
    let num = 2 * c.tp;
    num as f64 / (num + c.fp + c.fn_) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub confusion: Confusion,
    pub f1: f64,
    pub tp_ratio: f64,
    pub tn_ratio: f64,
    /// Times this node was selected for expansion.
    pub visits: u64,
}

impl NodeStats {
    pub fn from_confusion(confusion: Confusion) -> Self {
        Self {
            confusion,
            f1: f1(&confusion),
            tp_ratio: confusion.tp_ratio(),
            tn_ratio: confusion.tn_ratio(),
            visits: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Hyperparams {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    pub fn is_valid(&self) -> bool {
        [self.alpha, self.beta, self.gamma]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self::new(0.5, 0.1, 1.0)
    }
}

pub fn exploration(total_expansions: u64, node_visits: u64) -> f64 {
    ((1.0 + total_expansions as f64).ln() / (1.0 + node_visits as f64)).sqrt()
}

/// 1 iff both ratios are strictly above one half.
pub fn feasibility(stats: &NodeStats) -> u8 {
    u8::from(stats.tp_ratio > 0.5 && stats.tn_ratio > 0.5)
}

pub fn acquisition(stats: &NodeStats, size: usize, h: &Hyperparams, total_expansions: u64) -> f64 {
    stats.f1 + h.alpha * exploration(total_expansions, stats.visits) - h.beta * size as f64
        + h.gamma * f64::from(feasibility(stats))
}
