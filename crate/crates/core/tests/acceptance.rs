//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Thresholds are the constants below.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coop_rec::cf::{CandidateFilter, CandidateSelection, InteractionMatrix};
use coop_rec::data::{prepare_split, Behavior, DatasetSplit, InteractionRecord, PartitionConfig};
use coop_rec::experiment::{
    candidate_proportion_sweep, run_experiment_matrix, sparsity_sweep, transactional_ablation,
    Approach, MatrixResult,
};
use coop_rec::model::{build_model, train_global, Mode, ModelConfig, RecModel, TrainConfig};
use coop_rec::nn::{
    dense_backward, dense_forward, finite_diff_check, finite_diff_check_excluding, gru_forward,
    softmax_cross_entropy, GruCell, ParamTensor,
};
use coop_rec::pipeline::{PipelineConfig, Prepared};
use coop_rec::sim::{run_simulation, Message, MessageKind, MessageLog, NodeId, SimulationOutcome};
use coop_rec::sparsity::{lasso_backward, lasso_truncate, LassoConfig, PruningSchedule};
use coop_rec::synth::{generate, SynthConfig};
use coop_rec::wire::{decode_sparse, dense_len, encode_model, encode_model_dense, encode_sparse, sparse_len};

const GRAD_TOL: f64 = 1e-3;
const GRAD_EPS: f64 = 1e-5;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const AGP_TOL: f64 = 1e-12;
const AGP_SCHEDULES: usize = 100;
const CF_MATRICES: usize = 500;
const WIRE_VECTORS: usize = 10_000;
const WIRE_MAX_DIM: usize = 100_000;
const WIRE_MIN_RATIO: f64 = 7.5;
const MODEL_MAX_FRACTION: f64 = 1.0 / 7.0;
const MATRIX_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const MATRIX_MIN_LIFT: f64 = 0.10;
const MATRIX_BUDGET: Duration = Duration::from_secs(600);
const SPARSITY_MAX_DROP: f64 = 0.10;
const CANDIDATE_MAX_DROP: f64 = 0.10;
const TRANSACTIONAL_MIN_DROP: f64 = 0.20;
const SWEEP_SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn main() {
    let criteria: [(&str, fn(&mut World) -> Outcome); 11] = [
        ("gradient oracle", gradient_oracle),
        ("AGP schedule exactness", agp_exactness),
        ("CF oracle equivalence", cf_oracle),
        ("wire-format round trip", wire_round_trip),
        ("model compression", model_compression),
        ("accuracy ordering", accuracy_ordering),
        ("sparsity robustness", sparsity_robustness),
        ("candidate-proportion sensitivity", candidate_sensitivity),
        ("transactional-only ablation", transactional_only),
        ("privacy invariants", privacy_invariants),
        ("determinism", determinism),
    ];
    let mut world = World::default();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let o = check(&mut world);
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!(
            "{verdict} {:>2} {name}: {} [{:.1} s]",
            i + 1,
            o.detail,
            started.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

/// Synthetic data and simulation runs shared between criteria.
#[derive(Default)]
struct World {
    records: Option<Vec<InteractionRecord>>,
    split: Option<DatasetSplit>,
    runs: Vec<(Mode, SimulationOutcome)>,
}

fn synth() -> SynthConfig {
    SynthConfig::default()
}

fn partition() -> PartitionConfig {
    let s = synth();
    PartitionConfig {
        t_device: s.day_start(6),
        t_test: s.day_start(8),
        ..PartitionConfig::default()
    }
}

fn desk(candidates: Option<CandidateSelection>) -> PipelineConfig {
    PipelineConfig {
        candidates,
        purchase_cutoff: Some(partition().t_test),
        ..PipelineConfig::desk_scale()
    }
}

impl World {
    fn records(&mut self) -> &[InteractionRecord] {
        self.records
            .get_or_insert_with(|| generate(&synth(), SWEEP_SEED).expect("synthetic data"))
    }

    fn split(&mut self) -> DatasetSplit {
        if self.split.is_none() {
            let split = prepare_split(self.records(), &partition()).expect("split");
            self.split = Some(split);
        }
        self.split.clone().expect("set above")
    }

    /// Pull and push simulations on the shared split, each run twice.
    fn runs(&mut self) -> &[(Mode, SimulationOutcome)] {
        if self.runs.is_empty() {
            let split = self.split();
            let cfg = desk(Some(CandidateSelection::default()));
            for mode in [Mode::Pull, Mode::Push, Mode::Pull, Mode::Push] {
                let o = run_simulation(&split, mode, &cfg, SWEEP_SEED).expect("simulation");
                self.runs.push((mode, o));
            }
        }
        &self.runs
    }
}

fn rel_drop(reference: f64, value: f64) -> f64 {
    (reference - value) / reference
}

// 1 ------------------------------------------------------------------------

fn gradient_oracle(_: &mut World) -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut errors: Vec<(&str, f64)> = Vec::new();

    // dense: loss = <c, W x + b>
    let mut w = ParamTensor::glorot(&[4, 6], 6, 4, &mut rng);
    let mut b = ParamTensor::from_values(&[4], (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect());
    let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let d_x = dense_backward(&mut w, &mut b, &x, &c).unwrap();
    let mut params = w.values.clone();
    params.extend(&b.values);
    params.extend(&x);
    let mut analytic = w.grad.clone();
    analytic.extend(&b.grad);
    analytic.extend(&d_x);
    let err = finite_diff_check(
        |p| {
            let w = ParamTensor::from_values(&[4, 6], p[..24].to_vec());
            let b = ParamTensor::from_values(&[4], p[24..28].to_vec());
            dot(&dense_forward(&w, &b, &p[28..]).unwrap(), &c)
        },
        &params,
        &analytic,
        GRAD_EPS,
    );
    errors.push(("dense", err));

    // GRU: loss = sum_t <c_t, h_t>
    let mut cell = GruCell::new(3, 5, &mut rng);
    let xs: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let h0: Vec<f64> = (0..5).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let coef: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let trace = cell.forward(&xs, &h0).unwrap();
    let (d_in, d_h0) = cell.backward(&trace, &coef).unwrap();
    let mut params: Vec<f64> = cell.tensors().iter().flat_map(|t| t.values.clone()).collect();
    let n_cell = params.len();
    params.extend(xs.iter().flatten());
    params.extend(&h0);
    let mut analytic: Vec<f64> = cell.tensors().iter().flat_map(|t| t.grad.clone()).collect();
    analytic.extend(d_in.iter().flatten());
    analytic.extend(&d_h0);
    let mut probe = cell.clone();
    let err = finite_diff_check(
        |p| {
            let mut off = 0;
            for t in probe.tensors_mut() {
                let n = t.len();
                t.values.copy_from_slice(&p[off..off + n]);
                off += n;
            }
            let xs: Vec<Vec<f64>> = p[n_cell..n_cell + 12].chunks(3).map(<[f64]>::to_vec).collect();
            gru_forward(&probe, &xs, &p[n_cell + 12..])
                .unwrap()
                .iter()
                .zip(&coef)
                .map(|(h, k)| dot(h, k))
                .sum()
        },
        &params,
        &analytic,
        GRAD_EPS,
    );
    errors.push(("gru", err));

    // softmax cross-entropy
    let scores: Vec<f64> = (0..20).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let (_, mut grad) = softmax_cross_entropy(&scores, 7).unwrap();
    grad[7] -= 1.0;
    let err = finite_diff_check(
        |p| softmax_cross_entropy(p, 7).unwrap().0,
        &scores,
        &grad,
        GRAD_EPS,
    );
    errors.push(("softmax-ce", err));

    // lasso truncation: loss = <c, trunc(e)> + lambda * |trunc(e)|_1
    let (gamma, lambda) = (0.1, 0.05);
    let e: Vec<f64> = (0..64).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let c: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let analytic = lasso_backward(&c, &e, gamma, lambda);
    let report = finite_diff_check_excluding(
        |p| {
            let (t, pen) = lasso_truncate(p, gamma);
            dot(&t, &c) + lambda * pen
        },
        &e,
        &analytic,
        GRAD_EPS,
        |i| (e[i].abs() - gamma).abs() < 10.0 * GRAD_EPS,
    );
    errors.push(("lasso", report.max_rel_error));

    for mode in [Mode::Pull, Mode::Push] {
        for layers in [1, 2] {
            let m = build_model(
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
            .unwrap();
            let name = match (mode, layers) {
                (Mode::Pull, 1) => "model pull",
                (Mode::Pull, _) => "model pull x2",
                (Mode::Push, 1) => "model push",
                (Mode::Push, _) => "model push x2",
            };
            errors.push((name, composed_error(m, &[1, 4, 4, 9, 2, 17])));
        }
    }

    let elapsed = started.elapsed();
    let (worst, max) = errors
        .iter()
        .copied()
        .fold(("", 0.0), |acc, (n, e)| if e >= acc.1 { (n, e) } else { acc });
    outcome(
        max < GRAD_TOL && elapsed < GRAD_BUDGET,
        format!(
            "max rel err {max:.2e} ({worst}) over {} checks, limit {GRAD_TOL:.0e}; {:.1} s of {} s",
            errors.len(),
            elapsed.as_secs_f64(),
            GRAD_BUDGET.as_secs()
        ),
    )
}

/// Whole-model check; coordinates whose perturbation moves an activation
/// across the truncation threshold are skipped.
fn composed_error(mut m: RecModel, session: &[usize]) -> f64 {
    m.zero_grad();
    let pass = m.forward_session(session).unwrap();
    m.backward(&pass).unwrap();
    let analytic = m.flat_grads();
    let params = m.flat_params();
    let support = |model: &RecModel| -> Vec<bool> {
        let p = model.forward_session(session).unwrap();
        p.truncation_inputs(model.mode())
            .iter()
            .flatten()
            .map(|v| v.abs() > model.gamma())
            .collect()
    };
    let base = support(&m);
    let mut probe = m.clone();
    let mut kink = m.clone();
    finite_diff_check_excluding(
        |p| {
            probe.set_flat_params(p);
            probe.forward_session(session).unwrap().loss()
        },
        &params,
        &analytic,
        GRAD_EPS,
        |i| {
            [GRAD_EPS, -GRAD_EPS].iter().any(|d| {
                let mut p = params.clone();
                p[i] += d * 10.0;
                kink.set_flat_params(&p);
                support(&kink) != base
            })
        },
    )
    .max_rel_error
}

// 2 ------------------------------------------------------------------------

fn agp_exactness(_: &mut World) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_endpoint: f64 = 0.0;
    let mut violations = Vec::new();
    for k in 0..AGP_SCHEDULES {
        let si = rng.gen_range(0.0..0.5);
        let sf = if k % 10 == 0 { si } else { rng.gen_range(si + 0.01..0.99) };
        let s = PruningSchedule::new(si, sf, rng.gen_range(0..10), rng.gen_range(1..5), rng.gen_range(1..20))
            .unwrap();
        let t0 = s.start_epoch;
        let tn = s.end_epoch();
        worst_endpoint = worst_endpoint
            .max((s.sparsity_at(t0).unwrap() - si).abs())
            .max((s.sparsity_at(tn).unwrap() - sf).abs());
        let curve: Vec<f64> = (t0..=tn + 3).map(|t| s.sparsity_at(t).unwrap()).collect();
        if curve.windows(2).any(|w| w[1] < w[0]) {
            violations.push(format!("schedule {k} decreases"));
        }
        if si < sf {
            let steps: Vec<f64> = (0..=s.steps)
                .map(|j| s.sparsity_at(t0 + j * s.epochs_per_step).unwrap())
                .collect();
            let diffs: Vec<f64> = steps.windows(2).map(|w| w[1] - w[0]).collect();
            if diffs.windows(2).any(|d| d[1] >= d[0]) {
                violations.push(format!("schedule {k} increments do not shrink"));
            }
        }
    }
    outcome(
        worst_endpoint <= AGP_TOL && violations.is_empty(),
        format!(
            "{AGP_SCHEDULES} schedules, worst endpoint error {worst_endpoint:.1e} (limit {AGP_TOL:.0e}), {} shape violations{}",
            violations.len(),
            violations.first().map(|v| format!(": {v}")).unwrap_or_default()
        ),
    )
}

// 3 ------------------------------------------------------------------------

/// Brute-force candidate set over a dense 0/1 matrix `x[user][item]`.
fn naive_candidates(x: &[Vec<u8>], user: usize, selection: CandidateSelection) -> (Vec<usize>, Vec<f64>) {
    let n_items = x[0].len();
    let col = |m: usize| -> Vec<f64> { x.iter().map(|row| f64::from(row[m])).collect() };
    let cosine = |a: &[f64], b: &[f64]| -> f64 {
        let na: f64 = a.iter().map(|v| v * v).sum();
        let nb: f64 = b.iter().map(|v| v * v).sum();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / (na * nb).sqrt()
    };
    let scores: Vec<f64> = (0..n_items)
        .map(|m| {
            let (mut num, mut den) = (0.0, 0.0);
            for b in 0..n_items {
                let s = cosine(&col(m), &col(b));
                num += s * f64::from(x[user][b]);
                den += s.abs();
            }
            if den == 0.0 {
                0.0
            } else {
                num / den
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..n_items).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let keep = match selection {
        CandidateSelection::Threshold(p) => order.iter().filter(|&&m| scores[m] > p).count(),
        CandidateSelection::Proportion(q) => ((q * n_items as f64).ceil() as usize).min(n_items),
    };
    order.truncate(keep);
    let s = order.iter().map(|&m| scores[m]).collect();
    (order, s)
}

fn filter_for(x: &[Vec<u8>]) -> CandidateFilter {
    let purchases: Vec<InteractionRecord> = x
        .iter()
        .enumerate()
        .flat_map(|(u, row)| {
            row.iter().enumerate().filter(|(_, &v)| v == 1).map(move |(m, _)| InteractionRecord {
                user_id: u as u64,
                item_id: m as u64,
                category_id: 0,
                behavior: Behavior::Purchase,
                timestamp: 0,
            })
        })
        .collect();
    let matrix =
        InteractionMatrix::with_universe(&purchases, 0..x.len() as u64, 0..x[0].len() as u64).unwrap();
    CandidateFilter::new(matrix, None)
}

fn cf_oracle(_: &mut World) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0usize;
    let mut compared = 0usize;
    for _ in 0..CF_MATRICES {
        let (nu, ni) = (rng.gen_range(1..=20), rng.gen_range(1..=20));
        let density = rng.gen_range(0.05..0.6);
        let x: Vec<Vec<u8>> = (0..nu)
            .map(|_| (0..ni).map(|_| u8::from(rng.gen_bool(density))).collect())
            .collect();
        let filter = filter_for(&x);
        for u in 0..nu {
            for sel in [
                CandidateSelection::Proportion(rng.gen_range(0.01..=1.0)),
                CandidateSelection::Threshold(rng.gen_range(0.0..0.8)),
            ] {
                let got = filter.candidate_set(u as u64, sel).unwrap();
                let (items, scores) = naive_candidates(&x, u, sel);
                let items: Vec<u64> = items.into_iter().map(|m| m as u64).collect();
                compared += 1;
                if got.items != items || got.scores != scores {
                    mismatches += 1;
                }
            }
        }
    }
    let worked = filter_for(&[vec![1, 1], vec![0, 1]]).predict_click_prob(1, 0).unwrap();
    let expected = 2f64.sqrt() - 1.0;
    let worked_ok = (worked - expected).abs() < 1e-12 && (worked - 0.4142).abs() < 5e-5;
    outcome(
        mismatches == 0 && worked_ok,
        format!(
            "{CF_MATRICES} matrices, {compared} candidate sets, {mismatches} mismatches; 2x2 worked value {worked:.4}"
        ),
    )
}

// 4 ------------------------------------------------------------------------

fn wire_round_trip(_: &mut World) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = 0usize;
    let mut max_dim = 0usize;
    for k in 0..WIRE_VECTORS {
        // log-uniform dimension, with the extremes pinned
        let dim = match k {
            0 => 1,
            1 => WIRE_MAX_DIM,
            _ => (10f64.powf(rng.gen_range(0.0..5.0)) as usize).clamp(1, WIRE_MAX_DIM),
        };
        max_dim = max_dim.max(dim);
        let density: f64 = rng.gen_range(0.0..=1.0);
        let v: Vec<f64> = (0..dim)
            .map(|_| {
                if rng.gen_bool(density) {
                    f64::from(rng.gen_range(-10.0f32..10.0))
                } else {
                    0.0
                }
            })
            .collect();
        let nnz = v.iter().filter(|x| **x != 0.0).count();
        let bytes = encode_sparse(&v);
        let ok = bytes.len() == sparse_len(dim, nnz)
            && decode_sparse(&bytes).map(|d| d.to_dense() == v).unwrap_or(false);
        failures += usize::from(!ok);
    }
    let mut v = vec![0.0; 10_000];
    for x in v.iter_mut().step_by(10) {
        *x = 1.5;
    }
    let ratio = dense_len(10_000) as f64 / encode_sparse(&v).len() as f64;
    outcome(
        failures == 0 && ratio >= WIRE_MIN_RATIO,
        format!(
            "{WIRE_VECTORS} vectors up to d={max_dim}, {failures} failures; d=10000 at 90% sparsity: {} -> {} bytes, ratio {ratio:.2} (min {WIRE_MIN_RATIO})",
            dense_len(10_000),
            encode_sparse(&v).len()
        ),
    )
}

// 5 ------------------------------------------------------------------------

fn model_compression(w: &mut World) -> Outcome {
    let split = w.split();
    let prep = Prepared::new(&split);
    let cfg = desk(None);
    let mut model = build_model(prep.model_config(&cfg.model), SWEEP_SEED).unwrap();
    let train = TrainConfig {
        epochs: 4,
        pruning: Some(PruningSchedule::for_training(0.9, 4).unwrap()),
        ..cfg.train.clone()
    };
    train_global(&mut model, &prep.global, &train, SWEEP_SEED).unwrap();
    let sparse = encode_model(&model).len();
    let dense = encode_model_dense(&model).len();
    let fraction = sparse as f64 / dense as f64;
    outcome(
        fraction <= MODEL_MAX_FRACTION,
        format!(
            "weight sparsity {:.3}: {dense} -> {sparse} bytes, {fraction:.4} of dense (max {MODEL_MAX_FRACTION:.4})",
            model.weight_sparsity()
        ),
    )
}

// 6 ------------------------------------------------------------------------

fn accuracy_ordering(_: &mut World) -> Outcome {
    let started = Instant::now();
    let cfg = desk(None);
    let parts: Vec<MatrixResult> = MATRIX_SEEDS
        .iter()
        .map(|&seed| {
            let records = generate(&synth(), seed).unwrap();
            let split = prepare_split(&records, &partition()).unwrap();
            run_experiment_matrix(&split, &cfg, &[seed]).unwrap()
        })
        .collect();
    let m = MatrixResult::combine(parts).unwrap();
    let elapsed = started.elapsed();
    let gp = m.recall(Approach::GlobalPlusPersonal);
    let coop = m.recall(Approach::Cooperative);
    let og = m.recall(Approach::OnlyGlobal);
    let op = m.recall(Approach::OnlyPersonal);
    let lift = coop / og - 1.0;
    outcome(
        gp >= coop && coop > og && og > op && lift >= MATRIX_MIN_LIFT && elapsed < MATRIX_BUDGET,
        format!(
            "Recall@20 over {} seeds: global+personal {gp:.4}, cooperative {coop:.4}, only-global {og:.4}, only-personal {op:.4}; lift {:.1}% (min {:.0}%); {:.0} s of {} s",
            MATRIX_SEEDS.len(),
            100.0 * lift,
            100.0 * MATRIX_MIN_LIFT,
            elapsed.as_secs_f64(),
            MATRIX_BUDGET.as_secs()
        ),
    )
}

// 7 ------------------------------------------------------------------------

fn sparsity_robustness(w: &mut World) -> Outcome {
    let split = w.split();
    let cfg = desk(Some(CandidateSelection::default()));
    let points = sparsity_sweep(&split, &cfg, &[Mode::Pull, Mode::Push], &[None, Some(0.9)], &[SWEEP_SEED])
        .unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for pair in points.chunks(2) {
        let (dense, sparse) = (&pair[0], &pair[1]);
        let drop = rel_drop(dense.recall, sparse.recall);
        pass &= drop <= SPARSITY_MAX_DROP;
        parts.push(format!(
            "{} {:.4} vs {} {:.4} (drop {:.1}%)",
            dense.value,
            dense.recall,
            sparse.value,
            sparse.recall,
            100.0 * drop
        ));
    }
    outcome(
        pass,
        format!("{}; max drop {:.0}%", parts.join(", "), 100.0 * SPARSITY_MAX_DROP),
    )
}

// 8 ------------------------------------------------------------------------

fn candidate_sensitivity(w: &mut World) -> Outcome {
    let split = w.split();
    let cfg = desk(Some(CandidateSelection::default()));
    let selections = [
        Some(CandidateSelection::Proportion(0.01)),
        Some(CandidateSelection::Proportion(0.1)),
        None,
    ];
    let p = candidate_proportion_sweep(&split, &cfg, &selections, &[SWEEP_SEED]).unwrap();
    let (one, ten, full) = (p[0].recall, p[1].recall, p[2].recall);
    let drop = rel_drop(full, ten);
    outcome(
        one < ten && drop <= CANDIDATE_MAX_DROP,
        format!(
            "Recall@20 at 1% {one:.4}, 10% {ten:.4}, all items {full:.4}; 10% is {:.1}% below all (max {:.0}%)",
            100.0 * drop,
            100.0 * CANDIDATE_MAX_DROP
        ),
    )
}

// 9 ------------------------------------------------------------------------

fn transactional_only(w: &mut World) -> Outcome {
    let records = w.records().to_vec();
    let [clicks, tx] = transactional_ablation(&records, &partition(), &desk(None), &[SWEEP_SEED]).unwrap();
    let drop = rel_drop(clicks.recall, tx.recall);
    outcome(
        drop >= TRANSACTIONAL_MIN_DROP,
        format!(
            "Recall@20 clicks {:.4}, transactional {:.4}; drop {:.1}% (min {:.0}%)",
            clicks.recall,
            tx.recall,
            100.0 * drop,
            100.0 * TRANSACTIONAL_MIN_DROP
        ),
    )
}

// 10 -----------------------------------------------------------------------

fn privacy_invariants(w: &mut World) -> Outcome {
    let mut problems = Vec::new();
    let mut uploads = [0usize; 2];
    for (mode, o) in &w.runs()[..2] {
        let ups: Vec<&Message> = o.log.messages().iter().filter(|m| m.is_upload()).collect();
        match mode {
            Mode::Pull => {
                uploads[0] = ups.len();
                let bytes: u64 = ups.iter().map(|m| m.payload_bytes()).sum();
                if bytes != 0 || o.report.uploaded_bytes != 0 {
                    problems.push(format!("pull uploaded {bytes} bytes"));
                }
            }
            Mode::Push => {
                uploads[1] = ups.len();
                if ups.is_empty() {
                    problems.push("push produced no uploads".to_string());
                }
                if let Some(m) = ups.iter().find(|m| m.kind != MessageKind::UserEmbedding) {
                    problems.push(format!("push uploaded {}", m.kind));
                }
            }
        }
    }
    // the log itself refuses illegal traffic
    let mut log = MessageLog::new(Mode::Pull);
    let rejected = log
        .send(Message {
            kind: MessageKind::UserEmbedding,
            from: NodeId::Device(1),
            to: NodeId::Cloud,
            payload: bytes::Bytes::from_static(&[0; 8]),
        })
        .is_err();
    if !rejected {
        problems.push("pull log accepted an upload".to_string());
    }
    outcome(
        problems.is_empty(),
        format!(
            "pull: {} uploads, 0 bytes expected; push: {} uploads, all UserEmbedding expected; {}",
            uploads[0],
            uploads[1],
            if problems.is_empty() { "ok".to_string() } else { problems.join("; ") }
        ),
    )
}

// 11 -----------------------------------------------------------------------

fn determinism(w: &mut World) -> Outcome {
    let runs = w.runs();
    let mut same = true;
    let mut digests = Vec::new();
    for k in 0..2 {
        let (a, b) = (&runs[k].1, &runs[k + 2].1);
        let log_bytes = |o: &SimulationOutcome| {
            let mut buf = Vec::new();
            o.log.write_ndjson(&mut buf).unwrap();
            buf
        };
        same &= a.report.to_json() == b.report.to_json()
            && log_bytes(a) == log_bytes(b)
            && a.log.digest() == b.log.digest()
            && a.log.messages() == b.log.messages();
        digests.push(format!("{} {}", runs[k].0, &a.log.digest()[..12]));
    }
    outcome(
        same,
        format!("pull and push each run twice with seed {SWEEP_SEED}: reports and logs byte-identical ({})", digests.join(", ")),
    )
}
