//! In-process simulation of one cloud node serving many devices.
//!
//! Every interaction is a [`Message`] appended to a totally ordered
//! [`MessageLog`]. Devices are processed independently (in parallel when
//! threads are available) and their messages are appended in ascending user
//! order, so the log does not depend on scheduling.
//!
//! Pull mode: the cloud sends each device the global model and its candidate
//! set; the device scores locally and uploads nothing. Push mode: the cloud
//! sends the global model; for every prediction the device uploads its sparse
//! user embedding and the cloud answers with a top-K list.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use bytes::Bytes;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cf::CandidateFilter;
use crate::data::DatasetSplit;
use crate::metrics::MetricAccumulator;
use crate::model::{fine_tune, ItemVocab, Mode, RecModel, TrainingReport};
use crate::pipeline::{
    build_filter, candidate_indices, top_k_indices, train_or_init, PipelineConfig, PipelineError,
    Prepared,
};
use crate::wire::{
    decode_candidates, decode_item_list, decode_model, decode_sparse, encode_candidates,
    encode_item_list, encode_model, encode_model_dense, encode_sparse,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageKind {
    GlobalModel,
    CandidateSetItems,
    UserEmbedding,
    RecommendationList,
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeId {
    Cloud,
    Device(u64),
}

impl NodeId {
    pub fn is_device(self) -> bool {
        matches!(self, NodeId::Device(_))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Cloud => f.write_str("cloud"),
            NodeId::Device(u) => write!(f, "device:{u}"),
        }
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub kind: MessageKind,
    pub from: NodeId,
    pub to: NodeId,
    pub payload: Bytes,
}

impl Message {
    pub fn payload_bytes(&self) -> u64 {
        self.payload.len() as u64
    }

    /// Device-to-cloud traffic.
    pub fn is_upload(&self) -> bool {
        self.from.is_device()
    }
}

#[derive(Serialize)]
struct LogRecord {
    kind: MessageKind,
    from: NodeId,
    to: NodeId,
    bytes: u64,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("protocol violation: {kind} from {from} to {to} in {mode} mode")]
    ProtocolViolation {
        kind: MessageKind,
        from: NodeId,
        to: NodeId,
        mode: Mode,
    },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

fn pipe<T, E: Into<PipelineError>>(r: Result<T, E>) -> Result<T, SimError> {
    r.map_err(|e| SimError::Pipeline(e.into()))
}

/// Whether `kind` may travel `from -> to` in `mode`.
pub fn is_legal(mode: Mode, kind: MessageKind, from: NodeId, to: NodeId) -> bool {
    let down = from == NodeId::Cloud && to.is_device();
    let up = from.is_device() && to == NodeId::Cloud;
    match kind {
        MessageKind::GlobalModel => down,
        MessageKind::CandidateSetItems => down && mode == Mode::Pull,
        MessageKind::UserEmbedding => up && mode == Mode::Push,
        MessageKind::RecommendationList => down && mode == Mode::Push,
    }
}

/// Append-only message log that rejects messages illegal for its mode.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageLog {
    mode: Mode,
    messages: Vec<Message>,
}

impl MessageLog {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            messages: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn send(&mut self, message: Message) -> Result<(), SimError> {
        if !is_legal(self.mode, message.kind, message.from, message.to) {
            return Err(SimError::ProtocolViolation {
                kind: message.kind,
                from: message.from,
                to: message.to,
                mode: self.mode,
            });
        }
        self.messages.push(message);
        Ok(())
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn uploaded_bytes(&self) -> u64 {
        self.messages.iter().filter(|m| m.is_upload()).map(Message::payload_bytes).sum()
    }

    pub fn downloaded_bytes(&self) -> u64 {
        self.messages.iter().filter(|m| !m.is_upload()).map(Message::payload_bytes).sum()
    }

    pub fn bytes_by_kind(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for m in &self.messages {
            *out.entry(m.kind.to_string()).or_insert(0) += m.payload_bytes();
        }
        out
    }

    /// One `{kind, from, to, bytes}` JSON object per line.
    pub fn write_ndjson<W: Write>(&self, sink: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(sink);
        for m in &self.messages {
            let rec = LogRecord {
                kind: m.kind,
                from: m.from,
                to: m.to,
                bytes: m.payload_bytes(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    /// SHA-256 over every message header and payload.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for m in &self.messages {
            h.update(format!("{}|{}|{}|", m.kind, m.from, m.to).as_bytes());
            h.update((m.payload.len() as u64).to_le_bytes());
            h.update(&m.payload);
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserReport {
    pub user_id: u64,
    pub new_user: bool,
    pub instances: u64,
    pub recall: f64,
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub mode: Mode,
    pub seed: u64,
    pub k: usize,
    pub recall_at_k: f64,
    pub mrr_at_k: f64,
    pub instances: u64,
    pub users: Vec<UserReport>,
    pub uploaded_bytes: u64,
    pub downloaded_bytes: u64,
    pub bytes_by_kind: BTreeMap<String, u64>,
    pub messages: usize,
    pub model_bytes: u64,
    pub dense_model_bytes: u64,
    pub global_model_hash: String,
    pub log_digest: String,
    pub config: PipelineConfig,
}

impl SimulationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Report, message log and the (non-deterministic, timing-bearing) training
/// report of one simulation.
#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub report: SimulationReport,
    pub log: MessageLog,
    pub training: TrainingReport,
}

struct Cloud<'a> {
    model: RecModel,
    model_payload: Bytes,
    filter: Option<CandidateFilter>,
    vocab: &'a ItemVocab,
    cfg: &'a PipelineConfig,
}

impl Cloud<'_> {
    fn candidates(&self, user: u64) -> Result<Option<Vec<usize>>, SimError> {
        match (&self.filter, self.cfg.candidates) {
            (Some(f), Some(sel)) => Ok(Some(pipe(candidate_indices(f, self.vocab, user, sel))?)),
            _ => Ok(None),
        }
    }

    fn candidate_payload(&self, items: &[usize]) -> Bytes {
        let rows: Vec<Vec<f64>> = items.iter().map(|&i| self.model.sparse_item_embedding(i)).collect();
        Bytes::from(encode_candidates(items, &rows))
    }

    fn recommend(&self, embedding: &[u8], candidates: Option<&[usize]>) -> Result<Bytes, SimError> {
        let user = pipe(decode_sparse(embedding))?.to_dense();
        let scores = self.model.score_embedding(&user, candidates);
        Ok(Bytes::from(encode_item_list(&top_k_indices(&scores, candidates, self.cfg.top_k))))
    }
}

struct DeviceRun {
    user: u64,
    messages: Vec<Message>,
    metrics: MetricAccumulator,
}

fn hit_rank(list: &[usize], truth: usize) -> Option<usize> {
    list.iter().position(|&i| i == truth).map(|p| p + 1)
}

fn run_device(
    cloud: &Cloud<'_>,
    base: &RecModel,
    prep: &Prepared,
    user: u64,
    mode: Mode,
) -> Result<DeviceRun, SimError> {
    let me = NodeId::Device(user);
    let k = cloud.cfg.top_k;
    let mut messages = vec![Message {
        kind: MessageKind::GlobalModel,
        from: NodeId::Cloud,
        to: me,
        payload: cloud.model_payload.clone(),
    }];
    let model = pipe(fine_tune(base, prep.personal_of(user), &cloud.cfg.fine_tune))?;
    let candidates = cloud.candidates(user)?;
    let mut metrics = MetricAccumulator::default();
    let sessions = prep.test.get(&user).map(Vec::as_slice).unwrap_or(&[]);
    match mode {
        Mode::Pull => {
            let local = match &candidates {
                Some(c) => {
                    let payload = cloud.candidate_payload(c);
                    let items = pipe(decode_candidates(&payload))?.items;
                    messages.push(Message {
                        kind: MessageKind::CandidateSetItems,
                        from: NodeId::Cloud,
                        to: me,
                        payload,
                    });
                    Some(items.into_iter().map(|i| i as usize).collect::<Vec<_>>())
                }
                None => None,
            };
            for s in sessions.iter().filter(|s| s.len() >= 2) {
                let states = pipe(model.user_states(&s[..s.len() - 1]))?;
                for (state, &truth) in states.iter().zip(&s[1..]) {
                    let scores = model.score_embedding(state, local.as_deref());
                    let list = top_k_indices(&scores, local.as_deref(), k);
                    metrics.record(hit_rank(&list, truth), k);
                }
            }
        }
        Mode::Push => {
            for s in sessions.iter().filter(|s| s.len() >= 2) {
                let states = pipe(model.user_states(&s[..s.len() - 1]))?;
                for (state, &truth) in states.iter().zip(&s[1..]) {
                    let upload = Bytes::from(encode_sparse(state));
                    let reply = cloud.recommend(&upload, candidates.as_deref())?;
                    let list = pipe(decode_item_list(&reply))?;
                    messages.push(Message {
                        kind: MessageKind::UserEmbedding,
                        from: me,
                        to: NodeId::Cloud,
                        payload: upload,
                    });
                    messages.push(Message {
                        kind: MessageKind::RecommendationList,
                        from: NodeId::Cloud,
                        to: me,
                        payload: reply,
                    });
                    metrics.record(hit_rank(&list, truth), k);
                }
            }
        }
    }
    Ok(DeviceRun {
        user,
        messages,
        metrics,
    })
}

/// Runs the full cooperative flow for `mode` (the mode in `cfg.model` is
/// replaced). Identical inputs and seed give identical reports and logs.
pub fn run_simulation(
    split: &DatasetSplit,
    mode: Mode,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<SimulationOutcome, SimError> {
    pipe(cfg.validate())?;
    let mut cfg = cfg.clone();
    cfg.model.mode = mode;
    let prep = Prepared::new(split);
    let users = prep.test_users();
    if users.is_empty() {
        return Err(PipelineError::NoTestData.into());
    }
    let model_cfg = prep.model_config(&cfg.model);
    let (global, training) = train_or_init(model_cfg, &prep.global, &cfg.train, seed)?;
    let payload = encode_model(&global);
    let dense_model_bytes = encode_model_dense(&global).len() as u64;
    let base = pipe(decode_model(&payload))?;
    let filter = match cfg.candidates {
        Some(_) => Some(build_filter(split, &prep.vocab, &cfg)?),
        None => None,
    };
    let global_model_hash = global.content_hash();
    let cloud = Cloud {
        model: global,
        model_payload: Bytes::from(payload),
        filter,
        vocab: &prep.vocab,
        cfg: &cfg,
    };
    let runs: Vec<Result<DeviceRun, SimError>> = users
        .par_iter()
        .map(|&u| run_device(&cloud, &base, &prep, u, mode))
        .collect();
    let mut log = MessageLog::new(mode);
    let mut total = MetricAccumulator::default();
    let mut user_reports = Vec::with_capacity(runs.len());
    for run in runs {
        let run = run?;
        for m in run.messages {
            log.send(m)?;
        }
        total.merge(&run.metrics);
        user_reports.push(UserReport {
            user_id: run.user,
            new_user: prep.new_users.contains(&run.user),
            instances: run.metrics.instances,
            recall: run.metrics.recall(),
            mrr: run.metrics.mrr(),
        });
    }
    let report = SimulationReport {
        mode,
        seed,
        k: cfg.top_k,
        recall_at_k: total.recall(),
        mrr_at_k: total.mrr(),
        instances: total.instances,
        users: user_reports,
        uploaded_bytes: log.uploaded_bytes(),
        downloaded_bytes: log.downloaded_bytes(),
        bytes_by_kind: log.bytes_by_kind(),
        messages: log.messages().len(),
        model_bytes: cloud.model_payload.len() as u64,
        dense_model_bytes,
        global_model_hash,
        log_digest: log.digest(),
        config: cfg.clone(),
    };
    Ok(SimulationOutcome {
        report,
        log,
        training,
    })
}
