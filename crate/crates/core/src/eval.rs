//! Evaluation metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Action, Decision};
use crate::corpus::FlipLog;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("precision-recall curve needs at least one gold positive")]
    NoGoldPositives,
    #[error("non-finite confidence {0}")]
    NonFiniteConfidence(f64),
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Micro precision, recall and F1 over positive classes; NA contributes
/// to neither numerator.
pub fn micro_f1(pairs: &[(usize, usize)], na_index: usize) -> (f64, f64, f64) {
    let mut tp = 0;
    let mut emitted = 0;
    let mut gold = 0;
    for &(g, p) in pairs {
        if p != na_index {
            emitted += 1;
            if g == p {
                tp += 1;
            }
        }
        if g != na_index {
            gold += 1;
        }
    }
    let precision = ratio(tp, emitted);
    let recall = ratio(tp, gold);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Sweeps positive predictions by descending confidence (stable on ties)
/// and emits one point per prefix. Entries predicting NA are skipped.
pub fn pr_curve(
    scored: &[(usize, usize, f64)],
    na_index: usize,
    total_gold_positives: usize,
) -> Result<Vec<PrPoint>, EvalError> {
    if total_gold_positives == 0 {
        return Err(EvalError::NoGoldPositives);
    }
    if let Some(&(_, _, c)) = scored.iter().find(|s| !s.2.is_finite()) {
        return Err(EvalError::NonFiniteConfidence(c));
    }
    let mut ranked: Vec<&(usize, usize, f64)> = scored.iter().filter(|s| s.1 != na_index).collect();
    ranked.sort_by(|a, b| b.2.total_cmp(&a.2));
    let mut correct = 0;
    Ok(ranked
        .iter()
        .enumerate()
        .map(|(k, &&(gold, pred, conf))| {
            if gold == pred {
                correct += 1;
            }
            PrPoint {
                threshold: conf,
                precision: correct as f64 / (k + 1) as f64,
                recall: correct as f64 / total_gold_positives as f64,
            }
        })
        .collect())
}

/// Percentage of revised flipped instances restored to their original
/// relation; `None` when no flipped instance was revised.
pub fn revision_accuracy(decisions: &[Decision], flips: &FlipLog) -> Option<f64> {
    let mut total = 0;
    let mut right = 0;
    for d in decisions.iter().filter(|d| d.action == Action::Revise) {
        if let Some(original) = flips.original(&d.id) {
            total += 1;
            if d.revised_relation == Some(original) {
                right += 1;
            }
        }
    }
    (total > 0).then(|| 100.0 * right as f64 / total as f64)
}

/// Action counts on NA instances, split into true negatives and injected
/// false negatives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDistribution {
    /// `counts[0]` true negatives, `counts[1]` false negatives; columns
    /// follow [`Action`] order.
    pub counts: [[usize; 3]; 2],
}

impl PolicyDistribution {
    pub const TN: usize = 0;
    pub const FN: usize = 1;

    pub fn population(&self, row: usize) -> usize {
        self.counts[row].iter().sum()
    }

    pub fn total(&self) -> usize {
        self.population(Self::TN) + self.population(Self::FN)
    }

    /// Row percentage; `None` for an empty row.
    pub fn percent(&self, row: usize, action: Action) -> Option<f64> {
        let n = self.population(row);
        (n > 0).then(|| 100.0 * self.counts[row][action.index()] as f64 / n as f64)
    }

    pub fn row_percentages(&self, row: usize) -> Option<[f64; 3]> {
        let n = self.population(row);
        (n > 0).then(|| self.counts[row].map(|c| 100.0 * c as f64 / n as f64))
    }
}

pub fn policy_distribution(decisions: &[Decision], flips: &FlipLog) -> PolicyDistribution {
    let mut dist = PolicyDistribution::default();
    for d in decisions {
        let row = if flips.contains(&d.id) {
            PolicyDistribution::FN
        } else {
            PolicyDistribution::TN
        };
        dist.counts[row][d.action.index()] += 1;
    }
    dist
}
