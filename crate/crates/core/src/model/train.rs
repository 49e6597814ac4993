use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Mode, ModelError, RecModel, TensorRole};
use crate::nn::Adagrad;
use crate::sparsity::{apply_magnitude_prune, PruningSchedule};

/// Sessions used to calibrate the push-mode truncation threshold.
const CALIBRATION_SESSIONS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub pruning: Option<PruningSchedule>,
    /// Whether magnitude pruning also applies to the item embedding table.
    pub prune_embeddings: bool,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 0.01,
            epsilon: 1e-8,
            pruning: None,
            prune_embeddings: true,
            shuffle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneConfig {
    /// Passes over the user's personal sessions.
    pub steps: u32,
    /// Prediction instances that must accumulate before an update.
    pub update_batch_size: usize,
    pub learning_rate: f64,
    pub epsilon: f64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            update_batch_size: 50,
            learning_rate: 0.01,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub mean_loss: f64,
    pub instances: usize,
    /// Scheduled pruning level applied at the start of this epoch, if any.
    pub target_sparsity: Option<f64>,
    /// Fraction of masked weight entries after this epoch.
    pub weight_sparsity: f64,
    /// Fraction of truncated coordinates seen by the truncation layer.
    pub embedding_sparsity: f64,
    pub gamma: f64,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }
}

fn prune_model(model: &mut RecModel, target: f64, include_embeddings: bool) {
    let mut tensors: Vec<_> = model
        .tensors_mut()
        .into_iter()
        .filter(|(role, _)| !role.is_bias() && (include_embeddings || *role != TensorRole::Embedding))
        .map(|(_, t)| t)
        .collect();
    apply_magnitude_prune(&mut tensors, target);
}

fn apply_update(model: &mut RecModel, opt: &mut Adagrad, instances: usize, freeze_output: bool) {
    let scale = 1.0 / instances as f64;
    for (slot, (role, t)) in model.tensors_mut().into_iter().enumerate() {
        if freeze_output && role.is_output() {
            continue;
        }
        opt.step_tensor(slot, t, scale);
    }
    model.zero_grad();
}

struct Accumulated {
    loss: f64,
    instances: usize,
    truncated: usize,
    coordinates: usize,
}

/// Runs one pass over `order`, stepping every `batch` instances (and once
/// more for any remainder).
fn run_pass(
    model: &mut RecModel,
    opt: &mut Adagrad,
    sessions: &[&Vec<usize>],
    order: &[usize],
    batch: usize,
    freeze_output: bool,
) -> Result<Accumulated, ModelError> {
    let mut acc = Accumulated {
        loss: 0.0,
        instances: 0,
        truncated: 0,
        coordinates: 0,
    };
    let mut pending = 0;
    model.zero_grad();
    for &idx in order {
        let pass = model.forward_session(sessions[idx])?;
        acc.loss += pass.loss();
        acc.instances += pass.instances();
        let gamma = model.gamma();
        for v in pass.truncation_inputs(model.mode()).iter().flatten() {
            acc.coordinates += 1;
            if v.abs() <= gamma {
                acc.truncated += 1;
            }
        }
        model.backward(&pass)?;
        pending += pass.instances();
        if pending >= batch {
            apply_update(model, opt, pending, freeze_output);
            pending = 0;
        }
    }
    if pending > 0 {
        apply_update(model, opt, pending, freeze_output);
    }
    Ok(acc)
}

/// Trains `model` on next-click prediction over `sessions` (encoded item
/// indices). Applies the pruning schedule at scheduled epochs and, when the
/// config asks for a target embedding sparsity, recalibrates the truncation
/// threshold at the start of every epoch.
pub fn train_global(
    model: &mut RecModel,
    sessions: &[Vec<usize>],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainingReport, ModelError> {
    let usable: Vec<&Vec<usize>> = sessions.iter().filter(|s| s.len() >= 2).collect();
    if usable.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    if let Some(schedule) = &cfg.pruning {
        schedule.validate()?;
    }
    let calibration: Vec<Vec<usize>> = usable
        .iter()
        .take(CALIBRATION_SESSIONS)
        .map(|s| s.to_vec())
        .collect();
    let mut opt = Adagrad::new(cfg.learning_rate, cfg.epsilon);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let batch = model.config().batch_size;
    let mut report = TrainingReport::default();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut target = None;
        if let Some(schedule) = &cfg.pruning {
            if schedule.is_pruning_epoch(epoch) {
                let s = schedule.sparsity_at(epoch)?;
                prune_model(model, s, cfg.prune_embeddings);
                target = Some(s);
            }
        }
        model.calibrate_gamma(&calibration)?;
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let acc = run_pass(model, &mut opt, &usable, &order, batch, false)?;
        report.epochs.push(EpochRecord {
            epoch,
            mean_loss: acc.loss / acc.instances as f64,
            instances: acc.instances,
            target_sparsity: target,
            weight_sparsity: model.weight_sparsity(),
            embedding_sparsity: if acc.coordinates == 0 {
                0.0
            } else {
                acc.truncated as f64 / acc.coordinates as f64
            },
            gamma: model.gamma(),
            wall_time_secs: started.elapsed().as_secs_f64(),
        });
    }
    Ok(report)
}

/// Returns a copy of `global` fine-tuned on one user's sessions, in the order
/// given. The global model is not modified; pruning masks carry over. In push
/// mode the scoring head stays frozen because it lives on the cloud.
pub fn fine_tune(
    global: &RecModel,
    sessions: &[Vec<usize>],
    cfg: &FineTuneConfig,
) -> Result<RecModel, ModelError> {
    let mut model = global.clone();
    let usable: Vec<&Vec<usize>> = sessions.iter().filter(|s| s.len() >= 2).collect();
    if cfg.steps == 0 || usable.is_empty() {
        return Ok(model);
    }
    let mut opt = Adagrad::new(cfg.learning_rate, cfg.epsilon);
    let order: Vec<usize> = (0..usable.len()).collect();
    let freeze_output = model.mode() == Mode::Push;
    let batch = cfg.update_batch_size.max(1);
    for _ in 0..cfg.steps {
        run_pass(&mut model, &mut opt, &usable, &order, batch, freeze_output)?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig};
    use crate::sparsity::LassoConfig;

    fn small(mode: Mode) -> RecModel {
        build_model(
            ModelConfig {
                vocab_size: 12,
                embedding_dim: 6,
                hidden_dim: 8,
                batch_size: 4,
                mode,
                ..ModelConfig::default()
            },
            3,
        )
        .unwrap()
    }

    fn cyclic_sessions() -> Vec<Vec<usize>> {
        // deterministic pattern: i -> i + 1 (mod 6)
        (0..30)
            .map(|k| (0..6).map(|j| (k + j) % 6).collect())
            .collect()
    }

    #[test]
    fn empty_training_set() {
        let mut m = small(Mode::Pull);
        let err = train_global(&mut m, &[vec![1]], &TrainConfig::default(), 0).unwrap_err();
        assert_eq!(err, ModelError::EmptyTrainingSet);
    }

    #[test]
    fn one_session_of_length_two_is_one_instance() {
        let mut m = small(Mode::Pull);
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let r = train_global(&mut m, &[vec![1, 2]], &cfg, 0).unwrap();
        assert_eq!(r.epochs[0].instances, 1);
    }

    #[test]
    fn loss_falls_on_a_learnable_pattern() {
        let mut m = small(Mode::Pull);
        let cfg = TrainConfig {
            epochs: 8,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let r = train_global(&mut m, &cyclic_sessions(), &cfg, 1).unwrap();
        let l = r.losses();
        assert!(l.last().unwrap() < &(l[0] * 0.5), "{l:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let mut a = small(Mode::Push);
        let mut b = small(Mode::Push);
        train_global(&mut a, &cyclic_sessions(), &cfg, 9).unwrap();
        train_global(&mut b, &cyclic_sessions(), &cfg, 9).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn pruning_schedule_reaches_target_and_masks_persist() {
        let mut m = small(Mode::Pull);
        let cfg = TrainConfig {
            epochs: 4,
            pruning: Some(PruningSchedule::for_training(0.9, 4).unwrap()),
            ..TrainConfig::default()
        };
        let r = train_global(&mut m, &cyclic_sessions(), &cfg, 2).unwrap();
        let targets: Vec<f64> = r.epochs.iter().filter_map(|e| e.target_sparsity).collect();
        assert_eq!(targets.len(), 4);
        assert!((targets[3] - 0.9).abs() < 1e-12);
        assert!(m.weight_sparsity() >= 0.9);
        for (role, t) in m.tensors() {
            if role.is_bias() {
                continue;
            }
            for (v, keep) in t.values.iter().zip(t.mask()) {
                if !keep {
                    assert_eq!(*v, 0.0);
                }
            }
        }
        let before: Vec<Vec<bool>> = m.tensors().iter().map(|(_, t)| t.mask().to_vec()).collect();
        let tuned = fine_tune(&m, &cyclic_sessions()[..3], &FineTuneConfig::default()).unwrap();
        for ((_, t), mask) in tuned.tensors().iter().zip(&before) {
            assert_eq!(t.mask(), mask.as_slice());
            for (v, keep) in t.values.iter().zip(mask) {
                if !keep {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn fine_tune_is_isolated() {
        let mut g = small(Mode::Pull);
        train_global(&mut g, &cyclic_sessions(), &TrainConfig { epochs: 1, ..Default::default() }, 0).unwrap();
        let hash = g.content_hash();
        let zero = fine_tune(&g, &cyclic_sessions(), &FineTuneConfig { steps: 0, ..Default::default() }).unwrap();
        assert_eq!(zero.content_hash(), hash);
        let none = fine_tune(&g, &[], &FineTuneConfig::default()).unwrap();
        assert_eq!(none.content_hash(), hash);
        let tuned = fine_tune(&g, &[vec![3, 7, 3, 7]], &FineTuneConfig::default()).unwrap();
        assert_ne!(tuned.content_hash(), hash);
        assert_eq!(g.content_hash(), hash);
    }

    #[test]
    fn push_fine_tune_freezes_scoring_head() {
        let g = small(Mode::Push);
        let tuned = fine_tune(&g, &[vec![3, 7, 3, 7]], &FineTuneConfig::default()).unwrap();
        assert_eq!(tuned.out_w, g.out_w);
        assert_eq!(tuned.out_b, g.out_b);
        assert_ne!(tuned.embedding, g.embedding);
    }

    #[test]
    fn calibrated_push_embedding_sparsity() {
        let mut m = build_model(
            ModelConfig {
                vocab_size: 12,
                embedding_dim: 6,
                hidden_dim: 20,
                batch_size: 4,
                mode: Mode::Push,
                lasso: LassoConfig { gamma: 0.0, lambda_lasso: 1e-3 },
                embedding_sparsity: Some(0.9),
                ..ModelConfig::default()
            },
            5,
        )
        .unwrap();
        let r = train_global(&mut m, &cyclic_sessions(), &TrainConfig { epochs: 3, ..Default::default() }, 4).unwrap();
        assert!(r.epochs.iter().all(|e| e.gamma > 0.0));
        let e = m.extract_user_embedding(0, &[0, 1, 2], 0).unwrap();
        assert!(e.vector.iter().all(|v| *v == 0.0 || v.abs() > m.gamma()));
    }
}
