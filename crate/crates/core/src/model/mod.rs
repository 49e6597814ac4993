//! The session recommendation network.
//!
//! ```text
//! item ids -> embedding -> [truncation, pull] -> GRU stack -> [truncation, push] -> dense -> scores
//! ```
//!
//! In pull mode the truncation layer sparsifies item embeddings (they are what
//! the device downloads); in push mode it sparsifies the user embedding (what
//! the device uploads). Scores for item `j` are `dot(user, W_out[j]) + b_out[j]`.

mod train;
mod vocab;

pub use train::{
    fine_tune, train_global, EpochRecord, FineTuneConfig, TrainConfig, TrainingReport,
};
pub use vocab::ItemVocab;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::nn::{
    dot, matvec_acc, matvec_t_acc, outer_acc, softmax_cross_entropy, GruCell, GruTrace, NnError,
    ParamTensor,
};
use crate::sparsity::{calibrate_gamma, lasso_backward, lasso_truncate, LassoConfig, SparsityError};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sparsity(#[from] SparsityError),
    #[error("item index {item} outside vocabulary of {vocab}")]
    UnknownItem { item: usize, vocab: usize },
    #[error("empty session prefix")]
    EmptyPrefix,
    #[error("no training instances")]
    EmptyTrainingSet,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

/// Where the truncation layer sits and how recommendations are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Candidate items are pulled to the device and scored locally.
    #[default]
    Pull,
    /// The device pushes its user embedding; the cloud scores.
    Push,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Pull => "pull",
            Mode::Push => "push",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pull" => Ok(Mode::Pull),
            "push" => Ok(Mode::Push),
            other => Err(format!("unknown mode {other:?} (expected pull or push)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub gru_layers: usize,
    pub hidden_dim: usize,
    /// Prediction instances per optimizer step.
    pub batch_size: usize,
    pub mode: Mode,
    pub lasso: LassoConfig,
    /// When set, `gamma` is recalibrated so that this fraction of the
    /// truncated embedding's coordinates is zero.
    pub embedding_sparsity: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 1,
            embedding_dim: 32,
            gru_layers: 1,
            hidden_dim: 100,
            batch_size: 50,
            mode: Mode::Pull,
            lasso: LassoConfig::default(),
            embedding_sparsity: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("embedding_dim", self.embedding_dim),
            ("gru_layers", self.gru_layers),
            ("hidden_dim", self.hidden_dim),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if let Some(s) = self.embedding_sparsity {
            if !(0.0..1.0).contains(&s) {
                return Err(ModelError::InvalidConfig(format!(
                    "embedding_sparsity {s} outside [0, 1)"
                )));
            }
        }
        self.lasso.validate()?;
        Ok(())
    }

    /// Width of the user embedding.
    pub fn user_dim(&self) -> usize {
        self.hidden_dim
    }
}

/// What a parameter tensor is, for pruning and freezing decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    Embedding,
    GruWeight,
    GruBias,
    OutputWeight,
    OutputBias,
}

impl TensorRole {
    pub fn is_bias(self) -> bool {
        matches!(self, TensorRole::GruBias | TensorRole::OutputBias)
    }

    pub fn is_output(self) -> bool {
        matches!(self, TensorRole::OutputWeight | TensorRole::OutputBias)
    }
}

/// A user's next-item preference summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserEmbedding {
    pub user_id: u64,
    pub vector: Vec<f64>,
    pub produced_at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecModel {
    config: ModelConfig,
    gamma: f64,
    pub embedding: ParamTensor,
    pub gru: Vec<GruCell>,
    pub out_w: ParamTensor,
    pub out_b: ParamTensor,
    version: u64,
}

/// Recorded activations of one teacher-forced pass over a session.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    version: u64,
    inputs: Vec<usize>,
    targets: Vec<usize>,
    raw_inputs: Vec<Vec<f64>>,
    layers: Vec<GruTrace>,
    raw_user: Vec<Vec<f64>>,
    user: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    pub cross_entropy: f64,
    pub penalty: f64,
}

impl ForwardPass {
    /// Cross-entropy plus the weighted Lasso penalty.
    pub fn loss(&self) -> f64 {
        self.cross_entropy + self.penalty
    }

    pub fn instances(&self) -> usize {
        self.targets.len()
    }

    /// User embeddings fed to the scoring head, one per instance.
    pub fn user_embeddings(&self) -> &[Vec<f64>] {
        &self.user
    }

    /// Truncation inputs: embeddings in pull mode, GRU outputs in push mode.
    pub fn truncation_inputs(&self, mode: Mode) -> &[Vec<f64>] {
        match mode {
            Mode::Pull => &self.raw_inputs,
            Mode::Push => &self.raw_user,
        }
    }
}

/// Builds a freshly initialized model; identical seeds give identical weights.
pub fn build_model(config: ModelConfig, seed: u64) -> Result<RecModel, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (v, e, h) = (config.vocab_size, config.embedding_dim, config.hidden_dim);
    let embedding = ParamTensor::glorot(&[v, e], v, e, &mut rng);
    let gru = (0..config.gru_layers)
        .map(|l| GruCell::new(if l == 0 { e } else { h }, h, &mut rng))
        .collect();
    let out_w = ParamTensor::glorot(&[v, h], h, v, &mut rng);
    let out_b = ParamTensor::zeros(&[v]);
    let gamma = config.lasso.gamma;
    Ok(RecModel {
        config,
        gamma,
        embedding,
        gru,
        out_w,
        out_b,
        version: 0,
    })
}

impl RecModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    /// Active truncation threshold.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn set_gamma(&mut self, gamma: f64) {
        self.gamma = gamma;
        self.version += 1;
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        gamma: f64,
        embedding: ParamTensor,
        gru: Vec<GruCell>,
        out_w: ParamTensor,
        out_b: ParamTensor,
    ) -> Self {
        Self {
            config,
            gamma,
            embedding,
            gru,
            out_w,
            out_b,
            version: 0,
        }
    }

    pub fn tensors(&self) -> Vec<(TensorRole, &ParamTensor)> {
        let mut out = vec![(TensorRole::Embedding, &self.embedding)];
        for cell in &self.gru {
            for (k, t) in cell.tensors().into_iter().enumerate() {
                let role = if k % 3 == 2 { TensorRole::GruBias } else { TensorRole::GruWeight };
                out.push((role, t));
            }
        }
        out.push((TensorRole::OutputWeight, &self.out_w));
        out.push((TensorRole::OutputBias, &self.out_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(TensorRole, &mut ParamTensor)> {
        self.version += 1;
        let mut out = vec![(TensorRole::Embedding, &mut self.embedding)];
        for cell in &mut self.gru {
            for (k, t) in cell.tensors_mut().into_iter().enumerate() {
                let role = if k % 3 == 2 { TensorRole::GruBias } else { TensorRole::GruWeight };
                out.push((role, t));
            }
        }
        out.push((TensorRole::OutputWeight, &mut self.out_w));
        out.push((TensorRole::OutputBias, &mut self.out_b));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Fraction of weight (non-bias) entries that are masked.
    pub fn weight_sparsity(&self) -> f64 {
        let (masked, total) = self
            .tensors()
            .into_iter()
            .filter(|(r, _)| !r.is_bias())
            .fold((0, 0), |(m, n), (_, t)| (m + t.pruned_count(), n + t.len()));
        if total == 0 {
            0.0
        } else {
            masked as f64 / total as f64
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.values.iter().copied())
            .collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.grad.iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut off = 0;
        for (_, t) in self.tensors_mut() {
            let n = t.len();
            t.values.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        assert_eq!(off, flat.len(), "flat parameter length mismatch");
    }

    pub fn zero_grad(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.zero_grad();
        }
    }

    /// SHA-256 over configuration, threshold and every tensor.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.config).unwrap_or_default());
        hasher.update(self.gamma.to_bits().to_le_bytes());
        for (_, t) in self.tensors() {
            t.hash_into(&mut hasher);
        }
        hex::encode(hasher.finalize())
    }

    fn check_items(&self, items: &[usize]) -> Result<(), ModelError> {
        let vocab = self.config.vocab_size;
        match items.iter().find(|&&i| i >= vocab) {
            Some(&item) => Err(ModelError::UnknownItem { item, vocab }),
            None => Ok(()),
        }
    }

    /// Embedding fed to the GRU for `item` (truncated in pull mode).
    pub fn input_embedding(&self, item: usize) -> Vec<f64> {
        let row = self.embedding.row(item);
        match self.config.mode {
            Mode::Pull => lasso_truncate(row, self.gamma).0,
            Mode::Push => row.to_vec(),
        }
    }

    /// The pull-mode sparse item embedding for `item`.
    pub fn sparse_item_embedding(&self, item: usize) -> Vec<f64> {
        lasso_truncate(self.embedding.row(item), self.gamma).0
    }

    fn run_stack(&self, inputs: &[Vec<f64>]) -> Result<Vec<GruTrace>, ModelError> {
        let h0 = vec![0.0; self.config.hidden_dim];
        let mut traces: Vec<GruTrace> = Vec::with_capacity(self.gru.len());
        for cell in &self.gru {
            let trace = match traces.last() {
                None => cell.forward(inputs, &h0)?,
                Some(prev) => {
                    let xs: Vec<Vec<f64>> = prev.outputs().map(<[f64]>::to_vec).collect();
                    cell.forward(&xs, &h0)?
                }
            };
            traces.push(trace);
        }
        Ok(traces)
    }

    fn to_user(&self, raw: &[f64]) -> (Vec<f64>, f64) {
        match self.config.mode {
            Mode::Push => lasso_truncate(raw, self.gamma),
            Mode::Pull => (raw.to_vec(), 0.0),
        }
    }

    /// Teacher-forced pass: every prefix of `session` predicts its next item.
    pub fn forward_session(&self, session: &[usize]) -> Result<ForwardPass, ModelError> {
        self.check_items(session)?;
        let n = session.len().saturating_sub(1);
        let inputs = session[..n].to_vec();
        let targets = if n > 0 { session[1..].to_vec() } else { Vec::new() };
        let lambda = self.config.lasso.lambda_lasso;
        let mut penalty = 0.0;
        let mut raw_inputs = Vec::with_capacity(n);
        let mut xs = Vec::with_capacity(n);
        for &item in &inputs {
            let raw = self.embedding.row(item).to_vec();
            let x = match self.config.mode {
                Mode::Pull => {
                    let (x, p) = lasso_truncate(&raw, self.gamma);
                    penalty += p;
                    x
                }
                Mode::Push => raw.clone(),
            };
            raw_inputs.push(raw);
            xs.push(x);
        }
        let layers = self.run_stack(&xs)?;
        let raw_user: Vec<Vec<f64>> = match layers.last() {
            Some(top) => top.outputs().map(<[f64]>::to_vec).collect(),
            None => Vec::new(),
        };
        let mut user = Vec::with_capacity(n);
        let mut probs = Vec::with_capacity(n);
        let mut ce = 0.0;
        for (raw, &target) in raw_user.iter().zip(&targets) {
            let (u, p) = self.to_user(raw);
            penalty += p;
            let logits = self.logits(&u);
            let (loss, prob) = softmax_cross_entropy(&logits, target)?;
            ce += loss;
            user.push(u);
            probs.push(prob);
        }
        Ok(ForwardPass {
            version: self.version,
            inputs,
            targets,
            raw_inputs,
            layers,
            raw_user,
            user,
            probs,
            cross_entropy: ce,
            penalty: lambda * penalty,
        })
    }

    /// Accumulates gradients of `pass.loss()` into every tensor's `grad`.
    /// Fails if the parameters changed since `pass` was recorded.
    pub fn backward(&mut self, pass: &ForwardPass) -> Result<(), ModelError> {
        if pass.version != self.version || pass.layers.len() != self.gru.len() {
            return Err(NnError::NoForwardPass.into());
        }
        let (gamma, lambda) = (self.gamma, self.config.lasso.lambda_lasso);
        let mode = self.config.mode;
        let h = self.config.hidden_dim;
        let n = pass.instances();
        let mut d_top: Vec<Vec<f64>> = Vec::with_capacity(n);
        for t in 0..n {
            let mut d_logits = pass.probs[t].clone();
            d_logits[pass.targets[t]] -= 1.0;
            outer_acc(&mut self.out_w.grad, h, &d_logits, &pass.user[t]);
            for (g, d) in self.out_b.grad.iter_mut().zip(&d_logits) {
                *g += d;
            }
            let mut du = vec![0.0; h];
            matvec_t_acc(&self.out_w.values, h, &d_logits, &mut du);
            d_top.push(match mode {
                Mode::Push => lasso_backward(&du, &pass.raw_user[t], gamma, lambda),
                Mode::Pull => du,
            });
        }
        let mut upstream = d_top;
        for (cell, trace) in self.gru.iter_mut().zip(&pass.layers).rev() {
            let (d_in, _) = cell.backward(trace, &upstream)?;
            upstream = d_in;
        }
        for (t, &item) in pass.inputs.iter().enumerate() {
            let d_row = match mode {
                Mode::Pull => lasso_backward(&upstream[t], &pass.raw_inputs[t], gamma, lambda),
                Mode::Push => std::mem::take(&mut upstream[t]),
            };
            for (g, d) in self.embedding.grad_row_mut(item).iter_mut().zip(&d_row) {
                *g += d;
            }
        }
        self.embedding.mask_grad();
        self.out_w.mask_grad();
        Ok(())
    }

    /// Logits over the whole vocabulary for a user embedding.
    pub fn logits(&self, user: &[f64]) -> Vec<f64> {
        let mut out = self.out_b.values.clone();
        matvec_acc(&self.out_w.values, self.config.hidden_dim, user, &mut out);
        out
    }

    /// Scores for `candidates` (or the full vocabulary when `None`).
    pub fn score_embedding(&self, user: &[f64], candidates: Option<&[usize]>) -> Vec<f64> {
        match candidates {
            None => self.logits(user),
            Some(c) => c
                .iter()
                .map(|&j| dot(self.out_w.row(j), user) + self.out_b.values[j])
                .collect(),
        }
    }

    /// User embedding after each position of `prefix`.
    pub fn user_states(&self, prefix: &[usize]) -> Result<Vec<Vec<f64>>, ModelError> {
        self.check_items(prefix)?;
        let xs: Vec<Vec<f64>> = prefix.iter().map(|&i| self.input_embedding(i)).collect();
        let layers = self.run_stack(&xs)?;
        Ok(match layers.last() {
            Some(top) => top.outputs().map(|raw| self.to_user(raw).0).collect(),
            None => Vec::new(),
        })
    }

    /// Next-item scores after `prefix`.
    pub fn forward_scores(
        &self,
        prefix: &[usize],
        candidates: Option<&[usize]>,
    ) -> Result<Vec<f64>, ModelError> {
        if let Some(c) = candidates {
            self.check_items(c)?;
        }
        let states = self.user_states(prefix)?;
        let last = states.last().ok_or(ModelError::EmptyPrefix)?;
        Ok(self.score_embedding(last, candidates))
    }

    /// Final user embedding for `prefix`: truncated in push mode, raw in pull.
    pub fn extract_user_embedding(
        &self,
        user_id: u64,
        prefix: &[usize],
        produced_at: u64,
    ) -> Result<UserEmbedding, ModelError> {
        let mut states = self.user_states(prefix)?;
        let vector = states.pop().ok_or(ModelError::EmptyPrefix)?;
        Ok(UserEmbedding {
            user_id,
            vector,
            produced_at,
        })
    }

    /// Re-derives `gamma` from `config.embedding_sparsity`. Pull mode uses
    /// the embedding table; push mode uses GRU outputs over `sample`.
    pub fn calibrate_gamma(&mut self, sample: &[Vec<usize>]) -> Result<(), ModelError> {
        let Some(target) = self.config.embedding_sparsity else {
            return Ok(());
        };
        let mut mags: Vec<f64> = match self.config.mode {
            Mode::Pull => self.embedding.values.iter().map(|v| v.abs()).collect(),
            Mode::Push => {
                let xs_of = |s: &Vec<usize>| -> Vec<Vec<f64>> {
                    s.iter().map(|&i| self.embedding.row(i).to_vec()).collect()
                };
                let mut out = Vec::new();
                for s in sample {
                    self.check_items(s)?;
                    let layers = self.run_stack(&xs_of(s))?;
                    if let Some(top) = layers.last() {
                        out.extend(top.outputs().flatten().map(|v| v.abs()));
                    }
                }
                out
            }
        };
        if mags.is_empty() {
            return Ok(());
        }
        self.set_gamma(calibrate_gamma(&mut mags, target));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_diff_check_excluding;

    fn toy(mode: Mode, layers: usize) -> RecModel {
        build_model(
            ModelConfig {
                vocab_size: 20,
                embedding_dim: 4,
                hidden_dim: 5,
                gru_layers: layers,
                mode,
                lasso: LassoConfig {
                    gamma: 0.1,
                    lambda_lasso: 0.05,
                },
                ..ModelConfig::default()
            },
            7,
        )
        .unwrap()
    }

    #[test]
    fn default_config_shape() {
        let m = build_model(ModelConfig { vocab_size: 10, ..ModelConfig::default() }, 1).unwrap();
        assert_eq!(m.gru.len(), 1);
        assert_eq!(m.gru[0].hidden_dim, 100);
        assert!(m.tensors().iter().all(|(_, t)| t.pruned_count() == 0));
    }

    #[test]
    fn seeded_build_is_deterministic() {
        assert_eq!(toy(Mode::Pull, 1), toy(Mode::Pull, 1));
        let other = build_model(toy(Mode::Pull, 1).config.clone(), 8).unwrap();
        assert_ne!(toy(Mode::Pull, 1).content_hash(), other.content_hash());
    }

    #[test]
    fn stacked_layers_chain_hidden_states() {
        let m = toy(Mode::Pull, 2);
        assert_eq!(m.gru[1].input_dim, 5);
        let states = m.user_states(&[1, 2, 3]).unwrap();
        let xs: Vec<Vec<f64>> = [1, 2, 3].iter().map(|&i| m.input_embedding(i)).collect();
        let first = crate::nn::gru_forward(&m.gru[0], &xs, &[0.0; 5]).unwrap();
        let second = crate::nn::gru_forward(&m.gru[1], &first, &[0.0; 5]).unwrap();
        assert_eq!(states, second);
    }

    #[test]
    fn scores_full_vocab_and_candidates() {
        let m = toy(Mode::Pull, 1);
        let all = m.forward_scores(&[3, 4], None).unwrap();
        assert_eq!(all.len(), 20);
        let p = crate::nn::softmax(&all);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let some = m.forward_scores(&[3, 4], Some(&[5, 1])).unwrap();
        assert_eq!(some, vec![all[5], all[1]]);
        assert_eq!(m.forward_scores(&[3, 4], None).unwrap(), all);
    }

    #[test]
    fn scoring_errors() {
        let m = toy(Mode::Pull, 1);
        assert_eq!(m.forward_scores(&[], None), Err(ModelError::EmptyPrefix));
        assert_eq!(
            m.forward_scores(&[25], None),
            Err(ModelError::UnknownItem { item: 25, vocab: 20 })
        );
        assert!(m.extract_user_embedding(1, &[], 0).is_err());
    }

    #[test]
    fn push_embedding_is_truncated_pull_is_raw() {
        let mut push = toy(Mode::Push, 1);
        let e = push.extract_user_embedding(1, &[1, 2, 3], 0).unwrap();
        assert!(e.vector.iter().all(|v| *v == 0.0 || v.abs() > 0.1));
        push.set_gamma(10.0);
        let e = push.extract_user_embedding(1, &[1, 2, 3], 0).unwrap();
        assert!(e.vector.iter().all(|v| *v == 0.0));

        let mut pull = toy(Mode::Pull, 1);
        pull.set_gamma(10.0);
        let e = pull.extract_user_embedding(1, &[1, 2, 3], 0).unwrap();
        let raw = pull.run_stack(&vec![vec![0.0; 4]; 3]).unwrap();
        let expected: Vec<f64> = raw[0].outputs().last().unwrap().to_vec();
        assert_eq!(e.vector, expected);
    }

    #[test]
    fn backward_rejects_stale_pass() {
        let mut m = toy(Mode::Pull, 1);
        let pass = m.forward_session(&[1, 2, 3]).unwrap();
        m.zero_grad();
        assert_eq!(m.backward(&pass), Err(ModelError::Nn(NnError::NoForwardPass)));
        let pass = m.forward_session(&[1, 2, 3]).unwrap();
        assert!(m.backward(&pass).is_ok());
    }

    fn check_model_gradients(mut m: RecModel, session: &[usize]) -> f64 {
        m.zero_grad();
        let pass = m.forward_session(session).unwrap();
        m.backward(&pass).unwrap();
        let analytic = m.flat_grads();
        let params = m.flat_params();
        let eps = 1e-5;
        let mut probe = m.clone();
        let support = |model: &RecModel| -> Vec<bool> {
            let p = model.forward_session(session).unwrap();
            p.truncation_inputs(model.mode())
                .iter()
                .flatten()
                .map(|v| v.abs() > model.gamma())
                .collect()
        };
        let base = support(&m);
        let mut kink_probe = m.clone();
        let report = finite_diff_check_excluding(
            |p| {
                probe.set_flat_params(p);
                probe.forward_session(session).unwrap().loss()
            },
            &params,
            &analytic,
            eps,
            |i| {
                let mut flip = false;
                for delta in [eps, -eps] {
                    let mut p = params.clone();
                    p[i] += delta * 10.0;
                    kink_probe.set_flat_params(&p);
                    flip |= support(&kink_probe) != base;
                }
                flip
            },
        );
        report.max_rel_error
    }

    #[test]
    fn composed_gradients_pull_and_push() {
        for mode in [Mode::Pull, Mode::Push] {
            for layers in [1, 2] {
                let err = check_model_gradients(toy(mode, layers), &[1, 4, 4, 9, 2]);
                assert!(err < 1e-3, "{mode} x{layers}: {err}");
            }
        }
    }
}
