//! Top-K ranking metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no predictions to evaluate")]
    Empty,
    #[error("k must be at least 1")]
    ZeroK,
}

/// A ranked list of item ids and the item that was actually clicked next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction {
    pub ranking: Vec<u64>,
    pub truth: u64,
}

impl RankedPrediction {
    /// Ranks `(id, score)` pairs by descending score, ties by ascending id,
    /// keeping at most `k`.
    pub fn from_scores(scores: &[(u64, f64)], truth: u64, k: usize) -> Self {
        Self {
            ranking: top_k(scores, k),
            truth,
        }
    }

    /// 1-based rank of the truth, if present.
    pub fn rank(&self) -> Option<usize> {
        self.ranking.iter().position(|&i| i == self.truth).map(|p| p + 1)
    }
}

/// The `k` best ids by descending score with ascending-id tie-break.
pub fn top_k(scores: &[(u64, f64)], k: usize) -> Vec<u64> {
    let cmp = |a: &(u64, f64), b: &(u64, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    let mut v = scores.to_vec();
    if k < v.len() {
        v.select_nth_unstable_by(k, cmp);
        v.truncate(k);
    }
    v.sort_by(cmp);
    v.into_iter().map(|(i, _)| i).collect()
}

fn check(predictions: &[RankedPrediction], k: usize) -> Result<(), MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

fn hit_rank(p: &RankedPrediction, k: usize) -> Option<usize> {
    p.rank().filter(|&r| r <= k)
}

pub fn recall_at_k(predictions: &[RankedPrediction], k: usize) -> Result<f64, MetricsError> {
    check(predictions, k)?;
    let hits = predictions.iter().filter(|p| hit_rank(p, k).is_some()).count();
    Ok(hits as f64 / predictions.len() as f64)
}

pub fn mrr_at_k(predictions: &[RankedPrediction], k: usize) -> Result<f64, MetricsError> {
    check(predictions, k)?;
    let sum: f64 = predictions
        .iter()
        .filter_map(|p| hit_rank(p, k))
        .map(|r| 1.0 / r as f64)
        .sum();
    Ok(sum / predictions.len() as f64)
}

/// Running hit/reciprocal-rank totals, mergeable across users.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricAccumulator {
    pub instances: u64,
    pub hits: u64,
    pub reciprocal_rank_sum: f64,
}

impl MetricAccumulator {
    /// Records one instance whose truth landed at `rank` (1-based) or missed.
    pub fn record(&mut self, rank: Option<usize>, k: usize) {
        self.instances += 1;
        if let Some(r) = rank.filter(|&r| r <= k) {
            self.hits += 1;
            self.reciprocal_rank_sum += 1.0 / r as f64;
        }
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        self.instances += other.instances;
        self.hits += other.hits;
        self.reciprocal_rank_sum += other.reciprocal_rank_sum;
    }

    pub fn recall(&self) -> f64 {
        if self.instances == 0 {
            0.0
        } else {
            self.hits as f64 / self.instances as f64
        }
    }

    pub fn mrr(&self) -> f64 {
        if self.instances == 0 {
            0.0
        } else {
            self.reciprocal_rank_sum / self.instances as f64
        }
    }
}
