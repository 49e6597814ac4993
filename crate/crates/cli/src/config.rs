//! Declarative run configuration: one TOML file, overridable from flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use coop_rec::cf::CandidateSelection;
use coop_rec::data::PartitionConfig;
use coop_rec::model::Mode;
use coop_rec::pipeline::PipelineConfig;
use coop_rec::synth::SynthConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Interaction log in the `user,item,category,behavior,timestamp` layout.
    /// When absent, a synthetic log is generated from `[synthetic]`.
    pub interactions: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds averaged by `matrix`; empty means just the run seed.
    pub seeds: Vec<u64>,
    /// Candidate proportions for the candidate sweep; 1.0 scores all items.
    pub candidate_proportions: Vec<f64>,
    pub update_batch_sizes: Vec<usize>,
    /// Embedding sparsity levels for the sparsity sweep; 0.0 is the dense run.
    pub embedding_sparsities: Vec<f64>,
    pub t_devices: Vec<u64>,
    pub transactional_ablation: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: Vec::new(),
            candidate_proportions: Vec::new(),
            update_batch_sizes: Vec::new(),
            embedding_sparsities: Vec::new(),
            t_devices: Vec::new(),
            transactional_ablation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub mode: Mode,
    pub out: PathBuf,
    pub data: DataConfig,
    pub partition: PartitionConfig,
    pub pipeline: PipelineConfig,
    pub synthetic: SynthConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            mode: Mode::Pull,
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            partition: PartitionConfig::default(),
            pipeline: PipelineConfig::desk_scale(),
            synthetic: SynthConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub out: Option<PathBuf>,
    pub t_device: Option<u64>,
    pub t_test: Option<u64>,
    pub sparsity: Option<f64>,
    pub candidate_proportion: Option<f64>,
    pub input: Option<PathBuf>,
    /// `dotted.key=value` assignments, applied last.
    pub set: Vec<String>,
}

/// A `--set` assignment that could not be applied.
#[derive(Debug, thiserror::Error)]
#[error("bad --set {assignment:?}: {reason}")]
pub struct SetError {
    pub assignment: String,
    pub reason: String,
}

impl RunConfig {
    /// Reads a TOML file over the defaults; keys missing at any depth keep
    /// their default values.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let file: toml::Table =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let mut merged = serde_json::to_value(Self::default())?;
        merge(&mut merged, serde_json::to_value(file)?);
        serde_json::from_value(merged).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(t) = o.t_device {
            self.partition.t_device = t;
        }
        if let Some(t) = o.t_test {
            self.partition.t_test = t;
        }
        if let Some(s) = o.sparsity {
            self.pipeline.model.embedding_sparsity = Some(s);
        }
        if let Some(q) = o.candidate_proportion {
            self.pipeline.candidates = if q >= 1.0 {
                None
            } else {
                Some(CandidateSelection::Proportion(q))
            };
        }
        if let Some(p) = &o.input {
            self.data.interactions = Some(p.clone());
        }
        for assignment in &o.set {
            self.set(assignment)?;
        }
        Ok(())
    }

    /// Applies one `dotted.key=value` assignment. The value is read as a TOML
    /// literal, falling back to a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<(), SetError> {
        let err = |reason: String| SetError {
            assignment: assignment.to_string(),
            reason,
        };
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| err("expected key=value".into()))?;
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut patch = serde_json::to_value(value).map_err(|e| err(e.to_string()))?;
        for part in key.rsplit('.') {
            patch = serde_json::json!({ part: patch });
        }
        let mut root = serde_json::to_value(&*self).map_err(|e| err(e.to_string()))?;
        merge(&mut root, patch);
        *self = serde_json::from_value(root).map_err(|e| err(e.to_string()))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed.is_none() {
            bail!("a seed is required (--seed or `seed` in the config)");
        }
        if let Some(p) = &self.data.interactions {
            if !p.is_file() {
                bail!("interaction log {} does not exist", p.display());
            }
        }
        self.partition.validate()?;
        self.pipeline.validate()?;
        self.synthetic.validate()?;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated")
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.experiment.seeds.is_empty() {
            vec![self.seed()]
        } else {
            self.experiment.seeds.clone()
        }
    }

    /// The pipeline settings for this run. Unless set explicitly, the
    /// candidate filter only sees purchases made before `t_test`.
    pub fn pipeline(&self) -> PipelineConfig {
        let mut p = self.pipeline.clone();
        p.model.mode = self.mode;
        p.purchase_cutoff.get_or_insert(self.partition.t_test);
        p
    }
}

/// Recursively overlays `over` onto `base`; objects merge, anything else
/// replaces.
fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
