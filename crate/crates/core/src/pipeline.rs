//! Shared plumbing between the protocol simulator and the experiment runner:
//! configuration, encoded stage data, candidate sets and ranking evaluation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cf::{CandidateFilter, CandidateSelection, CfError};
use crate::data::{Behavior, DatasetSplit, Session};
use crate::metrics::MetricAccumulator;
use crate::model::{
    build_model, train_global, FineTuneConfig, ItemVocab, ModelConfig, ModelError, RecModel,
    TrainConfig, TrainingReport,
};
use crate::wire::WireError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cf(#[from] CfError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error("split has no test sessions")]
    NoTestData,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Everything needed to train, personalize and score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// `vocab_size` is overwritten with the size of the split's vocabulary.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub fine_tune: FineTuneConfig,
    /// `None` scores the whole vocabulary.
    pub candidates: Option<CandidateSelection>,
    pub k_neighbors: Option<usize>,
    /// Only purchases strictly before this timestamp feed the candidate filter.
    pub purchase_cutoff: Option<u64>,
    pub top_k: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            fine_tune: FineTuneConfig::default(),
            candidates: Some(CandidateSelection::default()),
            k_neighbors: None,
            purchase_cutoff: None,
            top_k: 20,
        }
    }
}

impl PipelineConfig {
    /// Training settings for the small synthetic worlds: more epochs and a
    /// larger step than the defaults, and short per-device fine-tuning with
    /// frequent updates.
    pub fn desk_scale() -> Self {
        Self {
            train: TrainConfig {
                epochs: 10,
                learning_rate: 0.05,
                ..TrainConfig::default()
            },
            fine_tune: FineTuneConfig {
                steps: 3,
                update_batch_size: 5,
                learning_rate: 0.03,
                ..FineTuneConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.top_k == 0 {
            return Err(PipelineError::InvalidConfig("top_k must be >= 1".into()));
        }
        if let Some(sel) = &self.candidates {
            sel.validate()?;
        }
        if self.k_neighbors == Some(0) {
            return Err(PipelineError::InvalidConfig("k_neighbors must be >= 1".into()));
        }
        Ok(())
    }
}

/// A split encoded against its item vocabulary.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: ItemVocab,
    pub global: Vec<Vec<usize>>,
    pub personal: BTreeMap<u64, Vec<Vec<usize>>>,
    /// Per-user global-stage sessions, for the personal-only baseline.
    pub own_global: BTreeMap<u64, Vec<Vec<usize>>>,
    pub test: BTreeMap<u64, Vec<Vec<usize>>>,
    pub new_users: BTreeSet<u64>,
}

impl Prepared {
    pub fn new(split: &DatasetSplit) -> Self {
        let vocab = ItemVocab::from_items(&split.all_items());
        let encode_map = |m: &BTreeMap<u64, Vec<Session>>| -> BTreeMap<u64, Vec<Vec<usize>>> {
            m.iter().map(|(&u, s)| (u, vocab.encode_all(s))).collect()
        };
        let mut own_global: BTreeMap<u64, Vec<Vec<usize>>> = BTreeMap::new();
        for s in &split.global_train {
            if let Some(enc) = vocab.encode(s) {
                own_global.entry(s.user_id).or_default().push(enc);
            }
        }
        Self {
            global: vocab.encode_all(&split.global_train),
            personal: encode_map(&split.personal_train),
            test: encode_map(&split.test),
            own_global,
            new_users: split.new_users.clone(),
            vocab,
        }
    }

    pub fn test_users(&self) -> Vec<u64> {
        self.test
            .iter()
            .filter(|(_, s)| s.iter().any(|s| s.len() >= 2))
            .map(|(&u, _)| u)
            .collect()
    }

    pub fn personal_of(&self, user: u64) -> &[Vec<usize>] {
        self.personal.get(&user).map(Vec::as_slice).unwrap_or(&[])
    }

    /// The user's own sessions from both training stages, oldest first.
    pub fn own_sessions(&self, user: u64) -> Vec<Vec<usize>> {
        let mut out = self.own_global.get(&user).cloned().unwrap_or_default();
        out.extend(self.personal_of(user).iter().cloned());
        out
    }

    /// Global sessions followed by every user's personal sessions.
    pub fn pooled(&self) -> Vec<Vec<usize>> {
        let mut out = self.global.clone();
        out.extend(self.personal.values().flatten().cloned());
        out
    }

    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            vocab_size: self.vocab.len(),
            ..base.clone()
        }
    }
}

/// Trains on `sessions`, or leaves the fresh model untouched if none are usable.
pub fn train_or_init(
    config: ModelConfig,
    sessions: &[Vec<usize>],
    train: &TrainConfig,
    seed: u64,
) -> Result<(RecModel, TrainingReport), PipelineError> {
    let mut model = build_model(config, seed)?;
    if !sessions.iter().any(|s| s.len() >= 2) {
        return Ok((model, TrainingReport::default()));
    }
    let report = train_global(&mut model, sessions, train, seed)?;
    Ok((model, report))
}

/// Builds the item-CF filter over the vocabulary and the split's users.
pub fn build_filter(
    split: &DatasetSplit,
    vocab: &ItemVocab,
    cfg: &PipelineConfig,
) -> Result<CandidateFilter, PipelineError> {
    let purchases: Vec<_> = split
        .transactional
        .iter()
        .filter(|r| r.behavior == Behavior::Purchase)
        .filter(|r| cfg.purchase_cutoff.map_or(true, |t| r.timestamp < t))
        .filter(|r| vocab.index_of(r.item_id).is_some())
        .copied()
        .collect();
    Ok(CandidateFilter::from_records(
        &purchases,
        split.users(),
        vocab.ids().iter().copied(),
        cfg.k_neighbors,
    )?)
}

/// Candidate vocabulary indices for `user`, in candidate rank order.
pub fn candidate_indices(
    filter: &CandidateFilter,
    vocab: &ItemVocab,
    user: u64,
    selection: CandidateSelection,
) -> Result<Vec<usize>, PipelineError> {
    let set = filter.candidate_set(user, selection)?;
    Ok(set
        .items
        .iter()
        .filter_map(|&id| vocab.index_of(id))
        .collect())
}

/// 1-based rank of `truth` among `candidates` (all items when `None`),
/// by descending score with ties broken by ascending index.
pub fn rank_of(scores: &[f64], candidates: Option<&[usize]>, truth: usize) -> Option<usize> {
    let ids: Vec<usize> = match candidates {
        None => (0..scores.len()).collect(),
        Some(c) => c.to_vec(),
    };
    let pos = ids.iter().position(|&i| i == truth)?;
    let ts = scores[pos];
    let better = ids
        .iter()
        .zip(scores)
        .filter(|&(&i, &v)| v > ts || (v == ts && i < truth))
        .count();
    Some(better + 1)
}

/// The `k` best candidates by descending score, ties by ascending index.
pub fn top_k_indices(scores: &[f64], candidates: Option<&[usize]>, k: usize) -> Vec<usize> {
    let mut pairs: Vec<(u64, f64)> = match candidates {
        None => scores.iter().enumerate().map(|(i, &v)| (i as u64, v)).collect(),
        Some(c) => c.iter().zip(scores).map(|(&i, &v)| (i as u64, v)).collect(),
    };
    pairs.retain(|p| !p.1.is_nan());
    crate::metrics::top_k(&pairs, k)
        .into_iter()
        .map(|i| i as usize)
        .collect()
}

/// Scores every next-click instance of `sessions` with `model`.
pub fn evaluate_sessions(
    model: &RecModel,
    sessions: &[Vec<usize>],
    candidates: Option<&[usize]>,
    top_k: usize,
) -> Result<MetricAccumulator, PipelineError> {
    let mut acc = MetricAccumulator::default();
    for s in sessions.iter().filter(|s| s.len() >= 2) {
        let states = model.user_states(&s[..s.len() - 1])?;
        for (state, &truth) in states.iter().zip(&s[1..]) {
            let scores = model.score_embedding(state, candidates);
            acc.record(rank_of(&scores, candidates, truth), top_k);
        }
    }
    Ok(acc)
}
