//! Lasso truncation of embeddings and gradual magnitude pruning of weights.
//!
//! The truncation layer zeroes every coordinate whose magnitude does not
//! exceed `gamma` and charges `lambda * sum |kept|` to the loss. The pruning
//! schedule drives per-tensor weight sparsity along a cubic curve from an
//! initial to a final level, pruning fast early and slowly late.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::ParamTensor;

#[derive(Debug, Error, PartialEq)]
pub enum SparsityError {
    #[error("invalid lasso config: {0}")]
    InvalidLasso(String),
    #[error("invalid pruning schedule: {0}")]
    InvalidSchedule(String),
    #[error("epoch {epoch} precedes pruning start {start}")]
    NotStarted { epoch: u32, start: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoConfig {
    pub gamma: f64,
    pub lambda_lasso: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.0,
            lambda_lasso: 0.0,
        }
    }
}

impl LassoConfig {
    pub fn validate(&self) -> Result<(), SparsityError> {
        for (name, v) in [("gamma", self.gamma), ("lambda_lasso", self.lambda_lasso)] {
            if !v.is_finite() || v < 0.0 {
                return Err(SparsityError::InvalidLasso(format!("{name} = {v}")));
            }
        }
        Ok(())
    }
}

/// Returns the truncated embedding and its L1 norm (the unweighted penalty).
pub fn lasso_truncate(embedding: &[f64], gamma: f64) -> (Vec<f64>, f64) {
    let mut penalty = 0.0;
    let out = embedding
        .iter()
        .map(|&e| {
            if e.abs() > gamma {
                penalty += e.abs();
                e
            } else {
                0.0
            }
        })
        .collect();
    (out, penalty)
}

/// Gradient through the truncation layer plus the weighted penalty.
/// Survivors pass `upstream + lambda * sign(e)`; truncated coordinates get 0.
pub fn lasso_backward(upstream: &[f64], embedding: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    upstream
        .iter()
        .zip(embedding)
        .map(|(&g, &e)| {
            if e.abs() > gamma {
                g + lambda * sign(e)
            } else {
                0.0
            }
        })
        .collect()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Smallest threshold that truncates at least `target` of the given
/// magnitudes. Sorts `magnitudes` in place.
pub fn calibrate_gamma(magnitudes: &mut [f64], target: f64) -> f64 {
    if magnitudes.is_empty() || target <= 0.0 {
        return 0.0;
    }
    magnitudes.sort_by(f64::total_cmp);
    let k = ((target * magnitudes.len() as f64).ceil() as usize).clamp(1, magnitudes.len());
    magnitudes[k - 1]
}

/// Cubic sparsity schedule
/// `s_t = s_f + (s_i - s_f) * (1 - (t - t0) / (n * dt))^3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruningSchedule {
    pub initial_sparsity: f64,
    pub final_sparsity: f64,
    pub start_epoch: u32,
    pub epochs_per_step: u32,
    pub steps: u32,
}

impl PruningSchedule {
    pub fn new(
        initial_sparsity: f64,
        final_sparsity: f64,
        start_epoch: u32,
        epochs_per_step: u32,
        steps: u32,
    ) -> Result<Self, SparsityError> {
        let s = Self {
            initial_sparsity,
            final_sparsity,
            start_epoch,
            epochs_per_step,
            steps,
        };
        s.validate()?;
        Ok(s)
    }

    /// Default operating point: prune from 0 to `final_sparsity` starting at
    /// epoch 1, one step per epoch, reaching the target on the last epoch.
    pub fn for_training(final_sparsity: f64, epochs: u32) -> Result<Self, SparsityError> {
        Self::new(0.0, final_sparsity, 1, 1, epochs.saturating_sub(1).max(1))
    }

    pub fn validate(&self) -> Result<(), SparsityError> {
        let (si, sf) = (self.initial_sparsity, self.final_sparsity);
        if !(0.0..1.0).contains(&si) || !(0.0..1.0).contains(&sf) || si > sf {
            return Err(SparsityError::InvalidSchedule(format!(
                "need 0 <= s_i <= s_f < 1, got s_i={si}, s_f={sf}"
            )));
        }
        if self.epochs_per_step == 0 || self.steps == 0 {
            return Err(SparsityError::InvalidSchedule(
                "epochs_per_step and steps must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn end_epoch(&self) -> u32 {
        self.start_epoch + self.steps * self.epochs_per_step
    }

    /// True on `t0, t0 + dt, ..., t0 + n dt`.
    pub fn is_pruning_epoch(&self, epoch: u32) -> bool {
        epoch >= self.start_epoch
            && epoch <= self.end_epoch()
            && (epoch - self.start_epoch) % self.epochs_per_step == 0
    }

    pub fn sparsity_at(&self, epoch: u32) -> Result<f64, SparsityError> {
        if epoch < self.start_epoch {
            return Err(SparsityError::NotStarted {
                epoch,
                start: self.start_epoch,
            });
        }
        if epoch >= self.end_epoch() {
            return Ok(self.final_sparsity);
        }
        let span = f64::from(self.steps) * f64::from(self.epochs_per_step);
        let progress = f64::from(epoch - self.start_epoch) / span;
        let remaining = 1.0 - progress;
        Ok(self.final_sparsity
            + (self.initial_sparsity - self.final_sparsity) * remaining * remaining * remaining)
    }
}

pub fn agp_sparsity_at(schedule: &PruningSchedule, epoch: u32) -> Result<f64, SparsityError> {
    schedule.sparsity_at(epoch)
}

/// Masks the smallest-magnitude active weights of each tensor until at least
/// `target` of its entries are masked. Ties break by ascending index. Masks
/// never regain entries, so a lower target than already reached is a no-op.
pub fn apply_magnitude_prune(tensors: &mut [&mut ParamTensor], target: f64) {
    for t in tensors.iter_mut() {
        prune_tensor(t, target);
    }
}

fn prune_tensor(t: &mut ParamTensor, target: f64) {
    let n = t.len();
    let want = ((target * n as f64).ceil() as usize).min(n);
    let have = t.pruned_count();
    if want <= have {
        return;
    }
    let mut active: Vec<usize> = (0..n).filter(|&i| t.is_active(i)).collect();
    active.sort_by(|&a, &b| {
        t.values[a]
            .abs()
            .total_cmp(&t.values[b].abs())
            .then(a.cmp(&b))
    });
    for &i in active.iter().take(want - have) {
        t.prune(i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn truncate_example() {
        let (e, p) = lasso_truncate(&[0.5, -0.05, 0.2], 0.1);
        assert_eq!(e, vec![0.5, 0.0, 0.2]);
        assert_abs_diff_eq!(p, 0.7, epsilon = 1e-15);
    }

    #[test]
    fn truncate_gamma_zero_and_full() {
        let v = [0.5, -0.25, 0.0, 2.0];
        let (e, p) = lasso_truncate(&v, 0.0);
        assert_eq!(e, v.to_vec());
        assert_abs_diff_eq!(p, 2.75);
        let (e, p) = lasso_truncate(&v, 2.0);
        assert!(e.iter().all(|x| *x == 0.0));
        assert_eq!(p, 0.0);
    }

    #[test]
    fn backward_cases() {
        let g = lasso_backward(&[1.0, 1.0, 0.0, 0.0], &[0.05, 0.5, -0.5, 0.1], 0.1, 0.2);
        assert_eq!(g, vec![0.0, 1.2, -0.2, 0.0]);
    }

    #[test]
    fn agp_endpoints_and_midpoint() {
        let s = PruningSchedule::new(0.0, 0.9, 3, 1, 2).unwrap();
        assert_eq!(s.sparsity_at(3).unwrap(), 0.0);
        assert_abs_diff_eq!(s.sparsity_at(4).unwrap(), 0.7875, epsilon = 1e-15);
        assert_abs_diff_eq!(s.sparsity_at(5).unwrap(), 0.9, epsilon = 1e-15);
        assert_eq!(s.sparsity_at(50).unwrap(), 0.9);
        assert_eq!(
            s.sparsity_at(2),
            Err(SparsityError::NotStarted { epoch: 2, start: 3 })
        );
        assert!(s.is_pruning_epoch(4) && !s.is_pruning_epoch(6));
    }

    #[test]
    fn invalid_schedules() {
        assert!(PruningSchedule::new(0.5, 0.2, 0, 1, 1).is_err());
        assert!(PruningSchedule::new(0.0, 1.0, 0, 1, 1).is_err());
        assert!(PruningSchedule::new(0.0, 0.5, 0, 0, 1).is_err());
        assert!(PruningSchedule::new(0.0, 0.5, 0, 1, 0).is_err());
    }

    #[test]
    fn magnitude_prune_example() {
        let mut t = ParamTensor::from_values(&[4], vec![1.0, -4.0, 0.1, 3.0]);
        apply_magnitude_prune(&mut [&mut t], 0.5);
        assert_eq!(t.mask(), &[false, true, false, true]);
        assert_eq!(t.values, vec![0.0, -4.0, 0.0, 3.0]);
        apply_magnitude_prune(&mut [&mut t], 0.25);
        assert_eq!(t.mask(), &[false, true, false, true]);
        apply_magnitude_prune(&mut [&mut t], 0.0);
        assert_eq!(t.pruned_count(), 2);
    }

    #[test]
    fn magnitude_prune_target_zero_is_noop() {
        let mut t = ParamTensor::from_values(&[3], vec![0.0, 1.0, 2.0]);
        apply_magnitude_prune(&mut [&mut t], 0.0);
        assert_eq!(t.pruned_count(), 0);
    }

    #[test]
    fn calibrated_gamma_hits_target() {
        let mut m: Vec<f64> = (1..=100).map(f64::from).collect();
        let g = calibrate_gamma(&mut m, 0.9);
        assert_eq!(g, 90.0);
        let (e, _) = lasso_truncate(&(1..=100).map(f64::from).collect::<Vec<_>>(), g);
        assert_eq!(e.iter().filter(|x| **x != 0.0).count(), 10);
    }

    proptest! {
        #[test]
        fn support_shrinks_with_gamma(v in prop::collection::vec(-2.0f64..2.0, 1..64), g1 in 0.0f64..2.0, g2 in 0.0f64..2.0) {
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            let nnz = |g| lasso_truncate(&v, g).0.iter().filter(|x| **x != 0.0).count();
            prop_assert!(nnz(hi) <= nnz(lo));
        }

        #[test]
        fn prune_within_one_weight(v in prop::collection::vec(-1.0f64..1.0, 1..200), target in 0.0f64..0.99) {
            let mut t = ParamTensor::from_values(&[v.len()], v.clone());
            apply_magnitude_prune(&mut [&mut t], target);
            let achieved = t.pruned_count() as f64 / v.len() as f64;
            prop_assert!(achieved >= target);
            prop_assert!(achieved - target < 1.0 / v.len() as f64 + 1e-12);
        }
    }
}
