//! The four-way comparison of training regimes plus the ablation sweeps.
//!
//! | approach          | global model trained on        | per-user fine-tuning on |
//! |-------------------|--------------------------------|-------------------------|
//! | `global+personal` | global and personal stages     | personal stage          |
//! | `cooperative`     | global stage                   | personal stage          |
//! | `only-global`     | global and personal stages     | none                    |
//! | `only-personal`   | nothing (fresh init)           | all of the user's own   |
//!
//! Every approach is scored on the same test instances with the same
//! candidate sets, and every model starts from the same seeded init.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cf::CandidateSelection;
use crate::data::{
    apply_cohorts, partition_temporal_with, prepare_split, DatasetSplit, InteractionRecord,
    PartitionConfig,
};
use crate::metrics::MetricAccumulator;
use crate::model::{build_model, fine_tune, FineTuneConfig, Mode, RecModel};
use crate::pipeline::{
    build_filter, candidate_indices, evaluate_sessions, train_or_init, PipelineConfig,
    PipelineError, Prepared,
};
use crate::sim::{run_simulation, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Approach {
    #[serde(rename = "global+personal")]
    GlobalPlusPersonal,
    #[serde(rename = "cooperative")]
    Cooperative,
    #[serde(rename = "only-global")]
    OnlyGlobal,
    #[serde(rename = "only-personal")]
    OnlyPersonal,
}

impl Approach {
    pub const ALL: [Approach; 4] = [
        Approach::GlobalPlusPersonal,
        Approach::Cooperative,
        Approach::OnlyGlobal,
        Approach::OnlyPersonal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Approach::GlobalPlusPersonal => "global+personal",
            Approach::Cooperative => "cooperative",
            Approach::OnlyGlobal => "only-global",
            Approach::OnlyPersonal => "only-personal",
        }
    }
}

/// Hit counts split by user cohort.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortMetrics {
    pub all: MetricAccumulator,
    pub old: MetricAccumulator,
    pub new: MetricAccumulator,
}

impl CohortMetrics {
    fn add(&mut self, m: &MetricAccumulator, new_user: bool) {
        self.all.merge(m);
        if new_user {
            self.new.merge(m);
        } else {
            self.old.merge(m);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachMetrics {
    pub approach: Approach,
    pub recall: f64,
    pub mrr: f64,
    pub recall_old: f64,
    pub recall_new: f64,
    pub mrr_old: f64,
    pub mrr_new: f64,
    pub instances: u64,
}

impl ApproachMetrics {
    fn from_cohorts(approach: Approach, c: &CohortMetrics) -> Self {
        Self {
            approach,
            recall: c.all.recall(),
            mrr: c.all.mrr(),
            recall_old: c.old.recall(),
            recall_new: c.new.recall(),
            mrr_old: c.old.mrr(),
            mrr_new: c.new.mrr(),
            instances: c.all.instances,
        }
    }

    fn mean(approach: Approach, rows: &[&ApproachMetrics]) -> Self {
        let n = rows.len().max(1) as f64;
        let avg = |f: fn(&ApproachMetrics) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        Self {
            approach,
            recall: avg(|r| r.recall),
            mrr: avg(|r| r.mrr),
            recall_old: avg(|r| r.recall_old),
            recall_new: avg(|r| r.recall_new),
            mrr_old: avg(|r| r.mrr_old),
            mrr_new: avg(|r| r.mrr_new),
            instances: rows.iter().map(|r| r.instances).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub rows: Vec<ApproachMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixResult {
    pub k: usize,
    pub seeds: Vec<SeedResult>,
    /// Per-approach means over seeds (instances are summed).
    pub mean: Vec<ApproachMetrics>,
}

impl MatrixResult {
    pub fn row(&self, approach: Approach) -> &ApproachMetrics {
        self.mean
            .iter()
            .find(|r| r.approach == approach)
            .expect("every approach is evaluated")
    }

    /// Pools per-seed results from runs on different splits and recomputes
    /// the means.
    pub fn combine(parts: Vec<MatrixResult>) -> Option<MatrixResult> {
        let k = parts.first()?.k;
        let seeds: Vec<SeedResult> = parts.into_iter().flat_map(|p| p.seeds).collect();
        let mean = mean_rows(&seeds);
        Some(MatrixResult { k, seeds, mean })
    }

    pub fn recall(&self, approach: Approach) -> f64 {
        self.row(approach).recall
    }

    /// `approach,metric,value` rows for the seed-averaged metrics.
    pub fn write_csv<W: Write>(&self, sink: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(sink);
        writeln!(w, "approach,metric,value")?;
        let k = self.k;
        for r in &self.mean {
            let name = r.approach.name();
            for (metric, v) in [
                (format!("recall@{k}"), r.recall),
                (format!("mrr@{k}"), r.mrr),
                (format!("recall@{k}_old"), r.recall_old),
                (format!("recall@{k}_new"), r.recall_new),
                (format!("mrr@{k}_old"), r.mrr_old),
                (format!("mrr@{k}_new"), r.mrr_new),
            ] {
                writeln!(w, "{name},{metric},{v}")?;
            }
            writeln!(w, "{name},instances,{}", r.instances)?;
        }
        w.flush()
    }
}

struct Context<'a> {
    split: &'a DatasetSplit,
    prep: Prepared,
    cfg: &'a PipelineConfig,
}

impl<'a> Context<'a> {
    fn new(split: &'a DatasetSplit, cfg: &'a PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let prep = Prepared::new(split);
        if prep.test_users().is_empty() {
            return Err(PipelineError::NoTestData);
        }
        Ok(Self { split, prep, cfg })
    }

    /// Candidate lists per test user for each selection (`None` = all items).
    fn candidates(
        &self,
        selections: &[Option<CandidateSelection>],
    ) -> Result<BTreeMap<u64, Vec<Option<Vec<usize>>>>, PipelineError> {
        let users = self.prep.test_users();
        if selections.iter().all(Option::is_none) {
            return Ok(users.into_iter().map(|u| (u, vec![None; selections.len()])).collect());
        }
        let filter = build_filter(self.split, &self.prep.vocab, self.cfg)?;
        users
            .into_iter()
            .map(|u| {
                let lists = selections
                    .iter()
                    .map(|sel| {
                        sel.map(|s| candidate_indices(&filter, &self.prep.vocab, u, s))
                            .transpose()
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok((u, lists))
            })
            .collect()
    }

    fn eval(&self, model: &RecModel, user: u64, cands: &Option<Vec<usize>>) -> Result<MetricAccumulator, PipelineError> {
        let sessions = self.prep.test.get(&user).map(Vec::as_slice).unwrap_or(&[]);
        evaluate_sessions(model, sessions, cands.as_deref(), self.cfg.top_k)
    }

    /// Runs `per_user` over test users (in parallel) and folds the results
    /// in ascending user order.
    fn per_user<F>(&self, slots: usize, per_user: F) -> Result<Vec<CohortMetrics>, PipelineError>
    where
        F: Fn(u64) -> Result<Vec<MetricAccumulator>, PipelineError> + Sync,
    {
        let users = self.prep.test_users();
        let results: Vec<_> = users.par_iter().map(|&u| per_user(u)).collect();
        let mut out = vec![CohortMetrics::default(); slots];
        for (u, r) in users.iter().zip(results) {
            let new_user = self.prep.new_users.contains(u);
            for (slot, m) in out.iter_mut().zip(r?) {
                slot.add(&m, new_user);
            }
        }
        Ok(out)
    }
}

fn matrix_seed(ctx: &Context<'_>, seed: u64) -> Result<Vec<ApproachMetrics>, PipelineError> {
    let cfg = ctx.cfg;
    let prep = &ctx.prep;
    let mc = prep.model_config(&cfg.model);
    let init = build_model(mc.clone(), seed)?;
    let (g_coop, _) = train_or_init(mc.clone(), &prep.global, &cfg.train, seed)?;
    let (g_full, _) = train_or_init(mc, &prep.pooled(), &cfg.train, seed)?;
    let cands = ctx.candidates(&[cfg.candidates])?;
    let ft = &cfg.fine_tune;
    let cohorts = ctx.per_user(4, |u| {
        let c = &cands[&u][0];
        let personal = prep.personal_of(u);
        Ok(vec![
            ctx.eval(&fine_tune(&g_full, personal, ft)?, u, c)?,
            ctx.eval(&fine_tune(&g_coop, personal, ft)?, u, c)?,
            ctx.eval(&g_full, u, c)?,
            ctx.eval(&fine_tune(&init, &prep.own_sessions(u), ft)?, u, c)?,
        ])
    })?;
    Ok(Approach::ALL
        .iter()
        .zip(&cohorts)
        .map(|(&a, c)| ApproachMetrics::from_cohorts(a, c))
        .collect())
}

/// Evaluates all four approaches for every seed and averages over seeds.
pub fn run_experiment_matrix(
    split: &DatasetSplit,
    cfg: &PipelineConfig,
    seeds: &[u64],
) -> Result<MatrixResult, PipelineError> {
    let ctx = Context::new(split, cfg)?;
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        per_seed.push(SeedResult {
            seed,
            rows: matrix_seed(&ctx, seed)?,
        });
    }
    let mean = mean_rows(&per_seed);
    Ok(MatrixResult {
        k: cfg.top_k,
        seeds: per_seed,
        mean,
    })
}

fn mean_rows(per_seed: &[SeedResult]) -> Vec<ApproachMetrics> {
    Approach::ALL
        .iter()
        .map(|&a| {
            let rows: Vec<&ApproachMetrics> = per_seed
                .iter()
                .flat_map(|s| s.rows.iter().filter(move |r| r.approach == a))
                .collect();
            ApproachMetrics::mean(a, &rows)
        })
        .collect()
}

/// One point of an ablation sweep, averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub parameter: String,
    pub value: String,
    pub recall: f64,
    pub mrr: f64,
    pub instances: u64,
    pub per_seed_recall: Vec<f64>,
}

impl SweepPoint {
    fn from_runs(parameter: &str, value: String, runs: &[MetricAccumulator]) -> Self {
        let n = runs.len().max(1) as f64;
        Self {
            parameter: parameter.to_string(),
            value,
            recall: runs.iter().map(MetricAccumulator::recall).sum::<f64>() / n,
            mrr: runs.iter().map(MetricAccumulator::mrr).sum::<f64>() / n,
            instances: runs.iter().map(|r| r.instances).sum(),
            per_seed_recall: runs.iter().map(MetricAccumulator::recall).collect(),
        }
    }
}

/// `parameter,value,metric,value` rows.
pub fn write_sweep_csv<W: Write>(sink: W, points: &[SweepPoint], k: usize) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(sink);
    writeln!(w, "parameter,setting,metric,value")?;
    for p in points {
        writeln!(w, "{},{},recall@{k},{}", p.parameter, p.value, p.recall)?;
        writeln!(w, "{},{},mrr@{k},{}", p.parameter, p.value, p.mrr)?;
    }
    w.flush()
}

/// Cooperative metrics for several candidate selections and fine-tuning
/// configs, sharing one global model per seed.
fn cooperative_grid(
    ctx: &Context<'_>,
    seed: u64,
    selections: &[Option<CandidateSelection>],
    fine_tunes: &[FineTuneConfig],
) -> Result<Vec<Vec<MetricAccumulator>>, PipelineError> {
    let prep = &ctx.prep;
    let mc = prep.model_config(&ctx.cfg.model);
    let (global, _) = train_or_init(mc, &prep.global, &ctx.cfg.train, seed)?;
    let cands = ctx.candidates(selections)?;
    let slots = selections.len() * fine_tunes.len();
    let cohorts = ctx.per_user(slots, |u| {
        let mut out = Vec::with_capacity(slots);
        for ft in fine_tunes {
            let model = fine_tune(&global, prep.personal_of(u), ft)?;
            for c in &cands[&u] {
                out.push(ctx.eval(&model, u, c)?);
            }
        }
        Ok(out)
    })?;
    Ok(cohorts
        .chunks(selections.len())
        .map(|row| row.iter().map(|c| c.all).collect())
        .collect())
}

fn selection_label(sel: &Option<CandidateSelection>) -> String {
    match sel {
        None => "all".to_string(),
        Some(CandidateSelection::Proportion(q)) => format!("proportion={q}"),
        Some(CandidateSelection::Threshold(p)) => format!("threshold={p}"),
    }
}

/// Cooperative Recall/MRR for each candidate selection.
pub fn candidate_proportion_sweep(
    split: &DatasetSplit,
    cfg: &PipelineConfig,
    selections: &[Option<CandidateSelection>],
    seeds: &[u64],
) -> Result<Vec<SweepPoint>, PipelineError> {
    let ctx = Context::new(split, cfg)?;
    let mut runs = vec![Vec::new(); selections.len()];
    for &seed in seeds {
        let grid = cooperative_grid(&ctx, seed, selections, std::slice::from_ref(&cfg.fine_tune))?;
        for (i, m) in grid[0].iter().enumerate() {
            runs[i].push(*m);
        }
    }
    Ok(selections
        .iter()
        .zip(runs)
        .map(|(s, r)| SweepPoint::from_runs("candidates", selection_label(s), &r))
        .collect())
}

/// Cooperative Recall/MRR for each on-device update batch size.
pub fn update_batch_sweep(
    split: &DatasetSplit,
    cfg: &PipelineConfig,
    batch_sizes: &[usize],
    seeds: &[u64],
) -> Result<Vec<SweepPoint>, PipelineError> {
    let ctx = Context::new(split, cfg)?;
    let fts: Vec<FineTuneConfig> = batch_sizes
        .iter()
        .map(|&b| FineTuneConfig {
            update_batch_size: b,
            ..cfg.fine_tune.clone()
        })
        .collect();
    let mut runs = vec![Vec::new(); fts.len()];
    for &seed in seeds {
        let grid = cooperative_grid(&ctx, seed, &[cfg.candidates], &fts)?;
        for (i, row) in grid.iter().enumerate() {
            runs[i].push(row[0]);
        }
    }
    Ok(batch_sizes
        .iter()
        .zip(runs)
        .map(|(b, r)| SweepPoint::from_runs("update_batch_size", b.to_string(), &r))
        .collect())
}

/// Cooperative simulation accuracy per (mode, embedding sparsity). `None`
/// is the dense run with truncation disabled.
pub fn sparsity_sweep(
    split: &DatasetSplit,
    cfg: &PipelineConfig,
    modes: &[Mode],
    levels: &[Option<f64>],
    seeds: &[u64],
) -> Result<Vec<SweepPoint>, SimError> {
    let mut out = Vec::new();
    for &mode in modes {
        for &level in levels {
            let mut c = cfg.clone();
            c.model.embedding_sparsity = level;
            if level.is_none() {
                c.model.lasso.gamma = 0.0;
                c.model.lasso.lambda_lasso = 0.0;
            }
            let mut runs = Vec::new();
            for &seed in seeds {
                let r = run_simulation(split, mode, &c, seed)?.report;
                runs.push(MetricAccumulator {
                    instances: r.instances,
                    hits: (r.recall_at_k * r.instances as f64).round() as u64,
                    reciprocal_rank_sum: r.mrr_at_k * r.instances as f64,
                });
            }
            let label = match level {
                None => format!("{mode}:dense"),
                Some(s) => format!("{mode}:{s}"),
            };
            out.push(SweepPoint::from_runs("embedding_sparsity", label, &runs));
        }
    }
    Ok(out)
}

/// Cooperative accuracy as the consent cutoff moves.
pub fn t_device_sweep(
    records: &[InteractionRecord],
    partition: &PartitionConfig,
    t_devices: &[u64],
    cfg: &PipelineConfig,
    seeds: &[u64],
) -> Result<Vec<SweepPoint>, PipelineError> {
    let mut out = Vec::new();
    for &t in t_devices {
        let p = PartitionConfig {
            t_device: t,
            ..partition.clone()
        };
        let split = prepare_split(records, &p)?;
        let ctx = Context::new(&split, cfg)?;
        let mut runs = Vec::new();
        for &seed in seeds {
            let grid = cooperative_grid(&ctx, seed, &[cfg.candidates], std::slice::from_ref(&cfg.fine_tune))?;
            runs.push(grid[0][0]);
        }
        out.push(SweepPoint::from_runs("t_device", t.to_string(), &runs));
    }
    Ok(out)
}

/// The click split with both training stages rebuilt from transactional
/// events (purchase, cart, favorite) instead of clicks. Test sessions, users
/// and cohorts are those of the click split.
pub fn transactional_split(
    records: &[InteractionRecord],
    partition: &PartitionConfig,
) -> Result<DatasetSplit, PipelineError> {
    let clicks = prepare_split(records, partition)?;
    let users = clicks.users();
    let tx = apply_cohorts(
        partition_temporal_with(records, partition, |b| b.is_transactional())?,
        clicks.new_users.clone(),
    );
    let keep = |s: &crate::data::Session| s.len() >= 2 && users.contains(&s.user_id);
    let mut out = clicks;
    out.global_train = tx.global_train.into_iter().filter(keep).collect();
    out.personal_train = tx
        .personal_train
        .into_iter()
        .map(|(u, s)| (u, s.into_iter().filter(keep).collect::<Vec<_>>()))
        .filter(|(_, s)| !s.is_empty())
        .collect();
    Ok(out)
}

/// Cooperative accuracy when trained on clicks versus transactional events
/// only; returns `[clicks, transactional]`.
pub fn transactional_ablation(
    records: &[InteractionRecord],
    partition: &PartitionConfig,
    cfg: &PipelineConfig,
    seeds: &[u64],
) -> Result<[SweepPoint; 2], PipelineError> {
    let click_split = prepare_split(records, partition)?;
    let tx_split = transactional_split(records, partition)?;
    let mut points = Vec::new();
    for (label, split) in [("clicks", &click_split), ("transactional", &tx_split)] {
        let ctx = Context::new(split, cfg)?;
        let mut runs = Vec::new();
        for &seed in seeds {
            let grid = cooperative_grid(&ctx, seed, &[cfg.candidates], std::slice::from_ref(&cfg.fine_tune))?;
            runs.push(grid[0][0]);
        }
        points.push(SweepPoint::from_runs("training_events", label.to_string(), &runs));
    }
    let tx = points.pop().expect("two points");
    let clicks = points.pop().expect("two points");
    Ok([clicks, tx])
}
