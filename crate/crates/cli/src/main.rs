//! `coop-rec`: command-line entry point.
//!
//! Every subcommand resolves a [`RunConfig`] from an optional TOML file plus
//! flags, writes its artifacts under `--out` and finishes with a
//! `manifest.json` listing the resolved config and SHA-256 hashes of inputs
//! and outputs. Bad flags or config exit with status 2; runtime failures
//! exit with status 1.

mod config;
mod output;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use coop_rec::cf::CandidateSelection;
use coop_rec::data::{
    parse_interactions, prepare_split, write_interactions, write_split, DatasetSplit,
    InteractionRecord, LogFormat,
};
use coop_rec::experiment::{
    candidate_proportion_sweep, run_experiment_matrix, sparsity_sweep, t_device_sweep,
    transactional_ablation, update_batch_sweep, write_sweep_csv, MatrixResult, SweepPoint,
};
use coop_rec::metrics::MetricAccumulator;
use coop_rec::model::Mode;
use coop_rec::pipeline::{build_filter, candidate_indices, evaluate_sessions, train_or_init, Prepared};
use coop_rec::sim::run_simulation;
use coop_rec::synth::generate;
use coop_rec::wire::{decode_model, encode_model, encode_model_dense};
use serde::Serialize;

use config::{Overrides, RunConfig};
use output::{sha256_hex, Outputs};

#[derive(Debug, Parser)]
#[command(name = "coop-rec", version, about = "Cloud-client cooperative session recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate an interaction log; write a normalized copy and counts.
    Ingest(Common),
    /// Split a log into global, personal and test stages.
    Partition(Common),
    /// Train the cloud model on the global stage.
    TrainGlobal(Common),
    /// Run the cooperative protocol and record every message.
    Simulate(Common),
    /// Score a cloud model on the test stage.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Model written by `train-global`; trained afresh when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Compare the four training regimes and run the configured sweeps.
    Matrix(Common),
    /// Write a synthetic interaction log.
    GenSynthetic {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        items: Option<usize>,
    },
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(Mode))]
    mode: Option<Mode>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    t_device: Option<u64>,
    #[arg(long)]
    t_test: Option<u64>,
    /// Target embedding sparsity in [0, 1).
    #[arg(long)]
    sparsity: Option<f64>,
    /// Candidate proportion in (0, 1]; 1 scores every item.
    #[arg(long)]
    candidate_proportion: Option<f64>,
    /// Interaction log; a synthetic log is generated when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Any config field as `dotted.key=value`, e.g. `pipeline.train.epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Partition(_) => "partition",
            Command::TrainGlobal(_) => "train-global",
            Command::Simulate(_) => "simulate",
            Command::Evaluate { .. } => "evaluate",
            Command::Matrix(_) => "matrix",
            Command::GenSynthetic { .. } => "gen-synthetic",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Ingest(c)
            | Command::Partition(c)
            | Command::TrainGlobal(c)
            | Command::Simulate(c)
            | Command::Matrix(c) => c,
            Command::Evaluate { common, .. } | Command::GenSynthetic { common, .. } => common,
        }
    }
}

fn resolve(command: &Command) -> Result<RunConfig> {
    let c = command.common();
    let mut cfg = RunConfig::load(c.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: c.seed,
        mode: c.mode,
        out: c.out.clone(),
        t_device: c.t_device,
        t_test: c.t_test,
        sparsity: c.sparsity,
        candidate_proportion: c.candidate_proportion,
        input: c.input.clone(),
        set: c.set.clone(),
    })?;
    if let Command::GenSynthetic { users, items, .. } = command {
        if let Some(u) = users {
            cfg.synthetic.users = *u;
        }
        if let Some(i) = items {
            cfg.synthetic.items = *i;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match resolve(&cli.command) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match run(&cli.command, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: &Command, cfg: &RunConfig) -> Result<()> {
    let mut out = Outputs::create(&cfg.out)?;
    match command {
        Command::Ingest(_) => ingest(cfg, &mut out)?,
        Command::Partition(_) => partition(cfg, &mut out)?,
        Command::TrainGlobal(_) => train(cfg, &mut out)?,
        Command::Simulate(_) => simulate(cfg, &mut out)?,
        Command::Evaluate { model, .. } => evaluate(cfg, model.as_deref(), &mut out)?,
        Command::Matrix(_) => matrix(cfg, &mut out)?,
        Command::GenSynthetic { .. } => gen_synthetic(cfg, &mut out)?,
    }
    out.finish(command.name(), cfg)
}

/// The interaction log, read from `data.interactions` or generated with `seed`.
fn load_records(cfg: &RunConfig, seed: u64, out: &mut Outputs) -> Result<Vec<InteractionRecord>> {
    let format = LogFormat::default();
    match &cfg.data.interactions {
        Some(path) => {
            let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            out.input(&path.display().to_string(), sha256_hex(&bytes));
            parse_interactions(bytes.as_slice(), &format)
                .with_context(|| format!("parsing {}", path.display()))
        }
        None => {
            let records = generate(&cfg.synthetic, seed)?;
            let mut buf = Vec::new();
            write_interactions(&mut buf, &records, &format)?;
            out.input(&format!("synthetic:seed={seed}"), sha256_hex(&buf));
            Ok(records)
        }
    }
}

fn load_split(cfg: &RunConfig, out: &mut Outputs) -> Result<(Vec<InteractionRecord>, DatasetSplit)> {
    let records = load_records(cfg, cfg.seed(), out)?;
    let split = prepare_split(&records, &cfg.partition)?;
    Ok((records, split))
}

fn json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Debug, Serialize)]
struct LogSummary {
    records: usize,
    users: usize,
    items: usize,
    categories: usize,
    behaviors: BTreeMap<String, usize>,
    first_timestamp: Option<u64>,
    last_timestamp: Option<u64>,
}

fn summarize(records: &[InteractionRecord]) -> LogSummary {
    let distinct = |f: fn(&InteractionRecord) -> u64| {
        records.iter().map(f).collect::<std::collections::BTreeSet<_>>().len()
    };
    let mut behaviors = BTreeMap::new();
    for r in records {
        *behaviors.entry(format!("{:?}", r.behavior).to_lowercase()).or_insert(0) += 1;
    }
    LogSummary {
        records: records.len(),
        users: distinct(|r| r.user_id),
        items: distinct(|r| r.item_id),
        categories: distinct(|r| r.category_id),
        behaviors,
        first_timestamp: records.iter().map(|r| r.timestamp).min(),
        last_timestamp: records.iter().map(|r| r.timestamp).max(),
    }
}

fn write_log(out: &mut Outputs, records: &[InteractionRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_interactions(&mut buf, records, &LogFormat::default())?;
    out.write("interactions.csv", &buf)?;
    out.write("summary.json", &json(&summarize(records))?)
}

fn ingest(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let records = load_records(cfg, cfg.seed(), out)?;
    write_log(out, &records)
}

fn gen_synthetic(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let records = generate(&cfg.synthetic, cfg.seed())?;
    let mut buf = Vec::new();
    write_interactions(&mut buf, &records, &LogFormat::default())?;
    let reread = parse_interactions(buf.as_slice(), &LogFormat::default())?;
    if reread != records {
        bail!("generated log does not survive a parse round trip");
    }
    write_log(out, &records)
}

fn partition(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let (_, split) = load_split(cfg, out)?;
    let manifest = write_split(&out.dir().join("split"), &split, &cfg.partition, &LogFormat::default())?;
    for name in manifest.hashes.keys() {
        out.record(&format!("split/{name}"))?;
    }
    out.record("split/manifest.json")
}

#[derive(Debug, Serialize)]
struct ModelSummary {
    content_hash: String,
    vocab_size: usize,
    parameters: usize,
    weight_sparsity: f64,
    encoded_bytes: usize,
    dense_bytes: usize,
}

fn train(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let (_, split) = load_split(cfg, out)?;
    let pipeline = cfg.pipeline();
    let prep = Prepared::new(&split);
    let (model, report) =
        train_or_init(prep.model_config(&pipeline.model), &prep.global, &pipeline.train, cfg.seed())?;
    let encoded = encode_model(&model);
    let summary = ModelSummary {
        content_hash: model.content_hash(),
        vocab_size: prep.vocab.len(),
        parameters: model.parameter_count(),
        weight_sparsity: model.weight_sparsity(),
        encoded_bytes: encoded.len(),
        dense_bytes: encode_model_dense(&model).len(),
    };
    out.write("model.bin", &encoded)?;
    out.write("model.json", &json(&summary)?)?;
    out.write("losses.json", &json(&report.losses())?)?;
    out.write_volatile("training.json", &json(&report)?)
}

fn simulate(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let (_, split) = load_split(cfg, out)?;
    let outcome = run_simulation(&split, cfg.mode, &cfg.pipeline(), cfg.seed())?;
    let mut report = outcome.report.to_json();
    report.push('\n');
    out.write("report.json", report.as_bytes())?;
    let mut log = Vec::new();
    outcome.log.write_ndjson(&mut log)?;
    out.write("messages.ndjson", &log)?;
    out.write_volatile("training.json", &json(&outcome.training)?)
}

#[derive(Debug, Serialize)]
struct EvaluationReport {
    k: usize,
    recall_at_k: f64,
    mrr_at_k: f64,
    instances: u64,
    model_hash: String,
}

fn evaluate(cfg: &RunConfig, model_path: Option<&std::path::Path>, out: &mut Outputs) -> Result<()> {
    let (_, split) = load_split(cfg, out)?;
    let pipeline = cfg.pipeline();
    let prep = Prepared::new(&split);
    let model = match model_path {
        Some(path) => {
            let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            out.input(&path.display().to_string(), sha256_hex(&bytes));
            let model = decode_model(&bytes)?;
            if model.config().vocab_size != prep.vocab.len() {
                bail!(
                    "model vocabulary has {} items but this split has {}",
                    model.config().vocab_size,
                    prep.vocab.len()
                );
            }
            model
        }
        None => {
            let mc = prep.model_config(&pipeline.model);
            train_or_init(mc, &prep.global, &pipeline.train, cfg.seed())?.0
        }
    };
    let filter = match pipeline.candidates {
        Some(_) => Some(build_filter(&split, &prep.vocab, &pipeline)?),
        None => None,
    };
    let mut acc = MetricAccumulator::default();
    for user in prep.test_users() {
        let candidates = match (&filter, pipeline.candidates) {
            (Some(f), Some(sel)) => Some(candidate_indices(f, &prep.vocab, user, sel)?),
            _ => None,
        };
        let m = evaluate_sessions(&model, &prep.test[&user], candidates.as_deref(), pipeline.top_k)?;
        acc.merge(&m);
    }
    let report = EvaluationReport {
        k: pipeline.top_k,
        recall_at_k: acc.recall(),
        mrr_at_k: acc.mrr(),
        instances: acc.instances,
        model_hash: model.content_hash(),
    };
    out.write("evaluation.json", &json(&report)?)
}

#[derive(Debug, Serialize)]
struct MatrixBundle<'a> {
    matrix: &'a MatrixResult,
    sweeps: &'a [SweepPoint],
}

fn matrix(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let pipeline = cfg.pipeline();
    let seeds = cfg.seeds();
    // A synthetic world is regenerated per seed; a real log is split once.
    let result = if cfg.data.interactions.is_none() {
        let mut parts = Vec::with_capacity(seeds.len());
        for &seed in &seeds {
            let records = load_records(cfg, seed, out)?;
            let split = prepare_split(&records, &cfg.partition)?;
            parts.push(run_experiment_matrix(&split, &pipeline, &[seed])?);
        }
        MatrixResult::combine(parts).context("no seeds")?
    } else {
        let (_, split) = load_split(cfg, out)?;
        run_experiment_matrix(&split, &pipeline, &seeds)?
    };
    let mut csv = Vec::new();
    result.write_csv(&mut csv)?;
    out.write("matrix.csv", &csv)?;

    let sweeps = run_sweeps(cfg, &seeds, out)?;
    if !sweeps.is_empty() {
        let mut csv = Vec::new();
        write_sweep_csv(&mut csv, &sweeps, pipeline.top_k)?;
        out.write("sweeps.csv", &csv)?;
    }
    out.write(
        "results.json",
        &json(&MatrixBundle {
            matrix: &result,
            sweeps: &sweeps,
        })?,
    )
}

/// Sweeps run on the run-seed dataset, averaging model seeds.
fn run_sweeps(cfg: &RunConfig, seeds: &[u64], out: &mut Outputs) -> Result<Vec<SweepPoint>> {
    let e = &cfg.experiment;
    let wanted = !e.candidate_proportions.is_empty()
        || !e.update_batch_sizes.is_empty()
        || !e.embedding_sparsities.is_empty()
        || !e.t_devices.is_empty()
        || e.transactional_ablation;
    if !wanted {
        return Ok(Vec::new());
    }
    let pipeline = cfg.pipeline();
    let (records, split) = load_split(cfg, out)?;
    let mut points = Vec::new();
    if !e.candidate_proportions.is_empty() {
        let selections: Vec<_> = e
            .candidate_proportions
            .iter()
            .map(|&q| (q < 1.0).then_some(CandidateSelection::Proportion(q)))
            .collect();
        points.extend(candidate_proportion_sweep(&split, &pipeline, &selections, seeds)?);
    }
    if !e.update_batch_sizes.is_empty() {
        points.extend(update_batch_sweep(&split, &pipeline, &e.update_batch_sizes, seeds)?);
    }
    if !e.embedding_sparsities.is_empty() {
        let levels: Vec<_> = e
            .embedding_sparsities
            .iter()
            .map(|&s| (s > 0.0).then_some(s))
            .collect();
        points.extend(sparsity_sweep(&split, &pipeline, &[Mode::Pull, Mode::Push], &levels, seeds)?);
    }
    if !e.t_devices.is_empty() {
        points.extend(t_device_sweep(&records, &cfg.partition, &e.t_devices, &pipeline, seeds)?);
    }
    if e.transactional_ablation {
        points.extend(transactional_ablation(&records, &cfg.partition, &pipeline, seeds)?);
    }
    Ok(points)
}
