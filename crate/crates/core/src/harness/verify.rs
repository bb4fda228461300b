//! Self-check suite: every oracle and property check in one report.
//!
//! Checks run in parallel and are reported sorted by name. Each returns the
//! largest error it measured so a pass can be judged by margin, not only by
//! its boolean.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::conv::Conv2d;
use crate::embedding::{FeatureMap, Frame};
use crate::error::{Result, StmaError};
use crate::idassoc::{affinity, readout, AffinityMatrix, Similarity};
use crate::init::{seeded_rng, uniform, SeededRng};
use crate::masks::TargetMasks;
use crate::memory::{pooled_id_values, KeyValue, SpatialMemory, TemporalMemory, UsageUpdate};
use crate::model::{ModelConfig, ModelWeights};
use crate::oracle::{direct_conv2d, TraceOp};
use crate::pipeline::{initialize_memories, segment_frame, PipelineConfig};
use crate::stml::{joint_attention_oracle, stml_block, AttentionMode, StmlWeights, Visibility};
use crate::tensor::{ops, Tensor};

use super::gradcheck::{
    bootstrapped_ce_gradients, combined_gradients, dice_gradients, random_state, stml_block_gradients,
};
use super::losses::DEFAULT_KEEP_FRACTION;
use super::metrics::{boundary, contour_accuracy, region_similarity, EvalRecord};
use super::simulate::{simulate, Simulator};
use super::synth::{generate_sequence, Shape};

pub const ATTENTION_TOLERANCE: f64 = 1e-10;
pub const GRADIENT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            s.push_str(&format!("{tag}  {:<28} max_err={:.3e}  {}\n", c.name, c.max_error, c.detail));
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        s.push_str(&format!("{passed}/{} checks passed\n", self.checks.len()));
        s
    }
}

/// What a check measured: the worst error and a short note.
struct Measured {
    passed: bool,
    max_error: f64,
    detail: String,
}

fn within(max_error: f64, tol: f64, detail: impl Into<String>) -> Measured {
    Measured { passed: max_error < tol, max_error, detail: detail.into() }
}

fn exact(failures: usize, detail: impl Into<String>) -> Measured {
    Measured { passed: failures == 0, max_error: failures as f64, detail: detail.into() }
}

type CheckFn = fn(bool) -> Result<Measured>;

fn checks() -> Vec<(&'static str, CheckFn)> {
    vec![
        ("affinity_oracle", |_| check_affinity()),
        ("attention_decomposition", |fault| {
            let err = decomposition_max_error(50, 1, fault)?;
            Ok(within(err, ATTENTION_TOLERANCE, "50 random block configurations"))
        }),
        ("attention_joint_mode", |_| check_joint_mode()),
        ("attention_no_object_mode", |_| {
            let err = no_object_max_error(20, 3)?;
            Ok(within(err, ATTENTION_TOLERANCE, "20 random block configurations"))
        }),
        ("attention_stream_isolation", |_| {
            let diffs = isolation_max_diff(20, 5)?;
            Ok(Measured {
                passed: diffs == 0.0,
                max_error: diffs,
                detail: "20 perturbation trials, exact zero required".into(),
            })
        }),
        ("boundary_matching_oracle", |_| check_boundary_oracle()),
        ("conv_direct_oracle", |_| check_conv()),
        ("gradient_bootstrapped_ce", |_| grad_check(bootstrapped_ce_gradients(31, DEFAULT_KEEP_FRACTION)?)),
        ("gradient_combined_loss", |_| grad_check(combined_gradients(32, DEFAULT_KEEP_FRACTION)?)),
        ("gradient_dice", |_| grad_check(dice_gradients(33)?)),
        ("gradient_stml_block", |_| grad_check(stml_block_gradients(34)?)),
        ("memory_capacity_bounds", |_| check_capacity_bounds()),
        ("memory_lfu_reference", |_| {
            let mismatches = (0..8).map(|s| lfu_trace_mismatches(1000, 100 + s)).sum::<Result<usize>>()?;
            Ok(exact(mismatches, "8 traces of 1000 ops"))
        }),
        ("memory_pin_persistence", |_| {
            let lost = usize::from(!pin_survives(100_000, 7)?);
            Ok(exact(lost, "100000 inserts"))
        }),
        ("memory_pooling_permutation", |_| check_pooling_permutation()),
        ("metric_identities", |_| {
            let failures = metric_identity_failures()?;
            Ok(exact(failures, "J, F and J&F identities"))
        }),
        ("pipeline_equivariance", |_| {
            let (mismatched, prob_err) = equivariance(6, 3, 32, 9)?;
            Ok(Measured {
                passed: mismatched == 0,
                max_error: prob_err,
                detail: format!("{mismatched} mask pixels differ"),
            })
        }),
        ("pipeline_memory_audit", |_| check_pipeline_audit()),
        ("readout_linearity", |_| check_readout_linearity()),
        ("synthetic_motion", |_| {
            let failures = synthetic_motion_failures(12, 3)?;
            Ok(exact(failures, "masks vs analytic positions"))
        }),
    ]
}

/// Runs every check; with `inject_fault` the attention oracle uses a broken
/// visibility mask and the decomposition check is expected to fail.
pub fn verify_all(inject_fault: bool) -> VerifyReport {
    let mut results: Vec<CheckResult> = checks()
        .into_par_iter()
        .map(|(name, f)| match f(inject_fault) {
            Ok(m) => CheckResult { name: name.to_string(), passed: m.passed, max_error: m.max_error, detail: m.detail },
            Err(e) => CheckResult {
                name: name.to_string(),
                passed: false,
                max_error: f64::INFINITY,
                detail: format!("error: {e}"),
            },
        })
        .collect();
    results.sort_by(|a, b| a.name.cmp(&b.name));
    VerifyReport { checks: results }
}

fn grad_check(r: super::gradcheck::GradReport) -> Result<Measured> {
    Ok(Measured {
        passed: r.probes >= 32 && r.max_rel_error < GRADIENT_TOLERANCE,
        max_error: r.max_rel_error,
        detail: format!("{} probed coordinates", r.probes),
    })
}

/// `(len, channels, heads, m, n)` with len ≤ 16, m ≤ 3, n ≤ 3, heads ∈ {1,2,4}.
fn random_shape(rng: &mut SeededRng, min_refs: usize) -> (usize, usize, usize, usize, usize) {
    let heads = [1, 2, 4][rng.gen_range(0..3)];
    let head_dim = rng.gen_range(1..=4);
    (rng.gen_range(1..=16), heads * head_dim, heads, rng.gen_range(min_refs..=3), rng.gen_range(1..=3))
}

/// Largest |Δ| between the decomposed block and the asymmetric-mask oracle
/// over `configs` random configurations.
pub fn decomposition_max_error(configs: usize, seed: u64, faulty: bool) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let (len, c, h, m, n) = random_shape(&mut rng, 0);
        let state = random_state(&mut rng, len, c, m, n)?;
        let w = StmlWeights::random(&mut rng, c, h)?;
        let vis = if faulty { Visibility::asymmetric_faulty(n, m, len) } else { Visibility::asymmetric(n, m, len) };
        let oracle = joint_attention_oracle(&state, &w, &vis)?;
        worst = worst.max(stml_block(&state, &w, AttentionMode::Full)?.max_abs_diff(&oracle)?);
    }
    Ok(worst)
}

/// Largest |Δ| on the reference and test streams between the no-object
/// block and the oracle with every object column hidden.
pub fn no_object_max_error(configs: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let (len, c, h, m, n) = random_shape(&mut rng, 0);
        let state = random_state(&mut rng, len, c, m, n)?;
        let w = StmlWeights::random(&mut rng, c, h)?;
        let out = stml_block(&state, &w, AttentionMode::NoObject)?;
        let oracle = joint_attention_oracle(&state, &w, &Visibility::without_objects(n, m, len))?;
        worst = worst.max(out.test.tokens.max_abs_diff(&oracle.test.tokens)?);
        for (a, b) in out.references.iter().zip(&oracle.references) {
            worst = worst.max(a.tokens.max_abs_diff(&b.tokens)?);
        }
        if out.objects != state.objects {
            return Err(StmaError::contract("no-object mode changed the object features"));
        }
    }
    Ok(worst)
}

fn check_joint_mode() -> Result<Measured> {
    let mut rng = seeded_rng(4);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (len, c, h, m, n) = random_shape(&mut rng, 1);
        let state = random_state(&mut rng, len, c, m, n)?;
        let w = StmlWeights::random(&mut rng, c, h)?;
        let oracle = joint_attention_oracle(&state, &w, &Visibility::all(n, m, len))?;
        worst = worst.max(stml_block(&state, &w, AttentionMode::Joint)?.max_abs_diff(&oracle)?);
    }
    Ok(within(worst, ATTENTION_TOLERANCE, "10 random block configurations"))
}

fn perturb(t: &Tensor, rng: &mut SeededRng) -> Tensor {
    let mut out = t.clone();
    for v in out.data_mut() {
        *v += rng.gen_range(-0.5..0.5);
    }
    out
}

/// Largest difference in outputs that must not depend on the perturbed
/// stream: other references when one reference moves; references and
/// objects when the test map moves.
pub fn isolation_max_diff(trials: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (len, c, h, _, n) = random_shape(&mut rng, 0);
        let m = rng.gen_range(2..=3);
        let state = random_state(&mut rng, len, c, m, n)?;
        let w = StmlWeights::random(&mut rng, c, h)?;
        let base = stml_block(&state, &w, AttentionMode::Full)?;

        let j = rng.gen_range(0..m);
        let mut moved = state.clone();
        moved.references[j].tokens = perturb(&state.references[j].tokens, &mut rng);
        let out = stml_block(&moved, &w, AttentionMode::Full)?;
        for (i, (a, b)) in out.references.iter().zip(&base.references).enumerate() {
            if i != j {
                worst = worst.max(a.tokens.max_abs_diff(&b.tokens)?);
            }
        }
        worst = worst.max(out.objects.vectors.max_abs_diff(&base.objects.vectors)?);

        let mut moved = state.clone();
        moved.test.tokens = perturb(&state.test.tokens, &mut rng);
        let out = stml_block(&moved, &w, AttentionMode::Full)?;
        for (a, b) in out.references.iter().zip(&base.references) {
            worst = worst.max(a.tokens.max_abs_diff(&b.tokens)?);
        }
        worst = worst.max(out.objects.vectors.max_abs_diff(&base.objects.vectors)?);
    }
    Ok(worst)
}

/// Random insert/touch trace over increasing frame indices. Amounts are
/// multiples of 1/4 so usage ties are common.
pub fn random_trace(ops: usize, seed: u64) -> Vec<TraceOp> {
    let mut rng = seeded_rng(seed);
    let mut next = 0usize;
    let mut trace = vec![TraceOp::Insert(0)];
    while trace.len() < ops {
        if rng.gen_bool(0.4) {
            next += rng.gen_range(1..=3);
            trace.push(TraceOp::Insert(next));
        } else {
            let f = rng.gen_range(0..=next);
            trace.push(TraceOp::Touch(f, f64::from(rng.gen_range(0..8u8)) / 4.0));
        }
    }
    trace
}

/// Eviction-sequence and final-state disagreements between the memory bank
/// and the independent simulator on one random trace.
pub fn lfu_trace_mismatches(ops: usize, seed: u64) -> Result<usize> {
    let trace = random_trace(ops, seed);
    let capacity = 2 + (seed as usize % 6);
    let bank = simulate(&trace, capacity, true, Simulator::Bank)?;
    let reference = simulate(&trace, capacity, true, Simulator::Reference)?;
    let mut mismatches = bank.evictions.iter().zip(&reference.evictions).filter(|(a, b)| a != b).count();
    mismatches += bank.evictions.len().abs_diff(reference.evictions.len());
    mismatches += usize::from(bank.entries != reference.entries);
    Ok(mismatches)
}

/// Inserts `inserts` frames into a small bank with adversarial touches
/// (the pinned entry is never touched) and reports whether frame 0 is
/// still stored.
pub fn pin_survives(inserts: usize, seed: u64) -> Result<bool> {
    let mut rng = seeded_rng(seed);
    let mut mem: TemporalMemory<()> = TemporalMemory::new(4)?;
    let mut spatial: SpatialMemory<()> = SpatialMemory::new(3, 2)?;
    for f in 0..inserts {
        mem.insert(f, ())?;
        spatial.insert(f, ())?;
        let mut inc = vec![0.0; mem.len()];
        for v in inc.iter_mut().skip(1) {
            *v = rng.gen_range(0.0..2.0);
        }
        mem.touch(&UsageUpdate::new(inc)?)?;
        if f % 1000 == 0 {
            mem.audit()?;
            spatial.audit()?;
        }
    }
    Ok(mem.position_of(0) == Some(0) && spatial.pinned().map(|e| e.frame_idx) == Some(0))
}

fn check_capacity_bounds() -> Result<Measured> {
    let mut violations = 0;
    for cap in 1..=6 {
        let mut spatial: SpatialMemory<()> = SpatialMemory::new(cap, 1 + cap % 3)?;
        let mut temporal: TemporalMemory<()> = TemporalMemory::new(cap.max(2))?;
        for (f, op) in random_trace(500, cap as u64).into_iter().enumerate() {
            if let TraceOp::Insert(i) = op {
                spatial.insert(i, ())?;
                temporal.insert(i, ())?;
            } else {
                let inc = (0..temporal.len()).map(|k| ((k + f) % 3) as f64).collect();
                temporal.touch(&UsageUpdate::new(inc)?)?;
            }
            violations += usize::from(spatial.len() > cap || temporal.len() > cap.max(2));
            violations += usize::from(spatial.audit().is_err() || temporal.audit().is_err());
        }
    }
    Ok(exact(violations, "capacities 1..=6 under 500-op traces"))
}

fn check_pooling_permutation() -> Result<Measured> {
    let mut rng = seeded_rng(8);
    let (n, tokens, cv) = (3, 5, 4);
    let perm = [2usize, 0, 1];
    let mut mem = TemporalMemory::new(4)?;
    let mut permuted = TemporalMemory::new(4)?;
    for f in 0..4 {
        let values = uniform(&mut rng, &[n, tokens, cv], -1.0, 1.0);
        let key = uniform(&mut rng, &[tokens, 8], -1.0, 1.0);
        let mut shuffled = vec![0.0; values.numel()];
        for (j, &p) in perm.iter().enumerate() {
            shuffled[p * tokens * cv..(p + 1) * tokens * cv]
                .copy_from_slice(&values.data()[j * tokens * cv..(j + 1) * tokens * cv]);
        }
        mem.insert(f, KeyValue::new(key.clone(), values)?)?;
        permuted.insert(f, KeyValue::new(key, Tensor::new(vec![n, tokens, cv], shuffled)?)?)?;
    }
    let a = pooled_id_values(&mem, n)?;
    let b = pooled_id_values(&permuted, n)?;
    let mut failures = 0;
    for (j, &p) in perm.iter().enumerate() {
        failures += usize::from(a.row(j) != b.row(p));
    }
    Ok(exact(failures, "pooled rows follow the target permutation"))
}

fn square(h: usize, w: usize, y0: usize, x0: usize, side: usize) -> Result<TargetMasks> {
    let ids = (0..h * w)
        .map(|i| u8::from((y0..y0 + side).contains(&(i / w)) && (x0..x0 + side).contains(&(i % w))))
        .collect();
    TargetMasks::new(h, w, 1, ids)
}

/// Count of violated metric identities.
pub fn metric_identity_failures() -> Result<usize> {
    let (h, w) = (24, 24);
    let a = square(h, w, 4, 4, 10)?;
    let shifted = square(h, w, 4, 9, 10)?;
    let disjoint = square(h, w, 14, 14, 8)?;
    let empty = TargetMasks::background(h, w, 1);
    let mut failures = 0;
    let mut expect = |got: f64, want: f64| failures += usize::from(got != want);
    expect(region_similarity(&a, &a, 1)?, 1.0);
    expect(contour_accuracy(&a, &a, 1, 1)?, 1.0);
    expect(region_similarity(&a, &disjoint, 1)?, 0.0);
    expect(region_similarity(&empty, &a, 1)?, 0.0);
    expect(contour_accuracy(&empty, &a, 1, 1)?, 0.0);
    expect(region_similarity(&a, &shifted, 1)?, 1.0 / 3.0);
    expect(region_similarity(&empty, &empty, 1)?, 1.0);
    expect(contour_accuracy(&empty, &empty, 1, 1)?, 1.0);
    let rec = EvalRecord::evaluate(&[(1, &a, &shifted), (2, &a, &disjoint), (3, &a, &a)])?;
    expect(rec.j_and_f(), (rec.mean_j() + rec.mean_f()) / 2.0);
    Ok(failures)
}

/// F by brute force: for every boundary pixel, scan every counterpart
/// boundary pixel for one within `tol`.
pub fn exhaustive_contour_accuracy(pred: &TargetMasks, gt: &TargetMasks, target: usize, tol: usize) -> f64 {
    let (h, w) = (gt.height(), gt.width());
    let pts = |m: &TargetMasks| -> Vec<(i64, i64)> {
        boundary(&m.binary(target), h, w)
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| ((i / w) as i64, (i % w) as i64))
            .collect()
    };
    let (pb, gb) = (pts(pred), pts(gt));
    if pb.is_empty() || gb.is_empty() {
        return if pb.is_empty() && gb.is_empty() { 1.0 } else { 0.0 };
    }
    let t = (tol * tol) as i64;
    let frac = |src: &[(i64, i64)], dst: &[(i64, i64)]| {
        let hit = src.iter().filter(|(y, x)| dst.iter().any(|(v, u)| (y - v).pow(2) + (x - u).pow(2) <= t)).count();
        hit as f64 / src.len() as f64
    };
    let (p, r) = (frac(&pb, &gb), frac(&gb, &pb));
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn check_boundary_oracle() -> Result<Measured> {
    let (h, w) = (20, 20);
    let a = square(h, w, 5, 5, 8)?;
    let dilated = square(h, w, 4, 4, 10)?;
    let mut worst: f64 = 0.0;
    for tol in [1, 2] {
        for (p, g) in [(&a, &dilated), (&dilated, &a)] {
            worst = worst.max((contour_accuracy(p, g, 1, tol)? - exhaustive_contour_accuracy(p, g, 1, tol)).abs());
        }
    }
    let mut rng = seeded_rng(12);
    for _ in 0..5 {
        let ids = |rng: &mut SeededRng| (0..h * w).map(|_| u8::from(rng.gen_bool(0.3))).collect();
        let p = TargetMasks::new(h, w, 1, ids(&mut rng))?;
        let g = TargetMasks::new(h, w, 1, ids(&mut rng))?;
        worst = worst.max((contour_accuracy(&p, &g, 1, 2)? - exhaustive_contour_accuracy(&p, &g, 1, 2)).abs());
    }
    Ok(within(worst, 1e-15, "square vs 1 px dilation, plus random masks"))
}

fn check_conv() -> Result<Measured> {
    let mut rng = seeded_rng(10);
    let mut worst: f64 = 0.0;
    for (c_in, c_out, k, s, h, w) in [(3, 4, 3, 1, 7, 6), (2, 5, 3, 2, 9, 8), (4, 2, 1, 1, 5, 5)] {
        let conv = Conv2d::random(&mut rng, c_in, c_out, k, s);
        let x = crate::conv::FeatureGrid::new(uniform(&mut rng, &[h * w, c_in], -1.0, 1.0), h, w)?;
        let fast = conv.forward(&x)?;
        let slow = direct_conv2d(&x, &conv);
        worst = worst.max(fast.tokens.max_abs_diff(&slow.tokens)?);
    }
    Ok(within(worst, 1e-12, "strided and unstrided kernels"))
}

fn key_value_memory(
    rng: &mut SeededRng,
    entries: usize,
    tokens: usize,
    c: usize,
    n: usize,
    cv: usize,
) -> Result<TemporalMemory<KeyValue>> {
    let mut mem = TemporalMemory::new(entries.max(2))?;
    for f in 0..entries {
        let kv = KeyValue::new(uniform(rng, &[tokens, c], -1.0, 1.0), uniform(rng, &[n, tokens, cv], -1.0, 1.0))?;
        mem.insert(f, kv)?;
    }
    Ok(mem)
}

fn check_affinity() -> Result<Measured> {
    let mut rng = seeded_rng(13);
    let (tokens, c) = (6, 8);
    let mem = key_value_memory(&mut rng, 3, tokens, c, 2, 4)?;
    let test = FeatureMap::new(uniform(&mut rng, &[tokens, c], -1.0, 1.0), tokens, 1)?;
    let mut worst: f64 = 0.0;
    for sim in [Similarity::Dot, Similarity::NegativeL2] {
        let (aff, usage) = affinity(&test, &mem, sim)?;
        let keys: Vec<&[f64]> =
            mem.entries().iter().flat_map(|e| (0..tokens).map(move |r| e.payload.key.row(r))).collect();
        for q in 0..tokens {
            let row = test.tokens.row(q);
            let logits: Vec<f64> = keys
                .iter()
                .map(|k| {
                    let s: f64 = match sim {
                        Similarity::Dot => row.iter().zip(*k).map(|(a, b)| a * b).sum(),
                        Similarity::NegativeL2 => -row.iter().zip(*k).map(|(a, b)| (a - b).powi(2)).sum::<f64>(),
                    };
                    s / (c as f64).sqrt()
                })
                .collect();
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            for (k, l) in logits.iter().enumerate() {
                worst = worst.max((aff.weights.at2(q, k) - (l - m).exp() / z).abs());
            }
        }
        let mass: f64 = aff.column_mass().iter().sum();
        worst = worst.max((usage.total() - tokens as f64).abs()).max((mass - tokens as f64).abs());
    }
    Ok(within(worst, 1e-10, "dot and negative-L2 against per-pair softmax"))
}

fn check_readout_linearity() -> Result<Measured> {
    let mut rng = seeded_rng(14);
    let (tokens, entries) = (4, 3);
    let mem = key_value_memory(&mut rng, entries, tokens, 4, 2, 3)?;
    let width = tokens * entries;
    let a1 = ops::softmax_rows(&uniform(&mut rng, &[tokens, width], -2.0, 2.0))?;
    let a2 = ops::softmax_rows(&uniform(&mut rng, &[tokens, width], -2.0, 2.0))?;
    let alpha = 0.3;
    let mix = ops::add(&ops::scale(&a1, alpha), &ops::scale(&a2, 1.0 - alpha))?;
    let r = |a: &Tensor| readout(&AffinityMatrix::new(a.clone(), tokens)?, &mem);
    let (r1, r2, rm) = (r(&a1)?, r(&a2)?, r(&mix)?);
    let expected = ops::add(&ops::scale(&r1.per_target, alpha), &ops::scale(&r2.per_target, 1.0 - alpha))?;
    Ok(within(rm.per_target.max_abs_diff(&expected)?, 1e-12, "convex mix of two affinities"))
}

fn small_model(size: usize) -> ModelConfig {
    ModelConfig {
        height: size,
        width: size,
        channels: 16,
        heads: 2,
        blocks: 1,
        value_channels: 8,
        ..ModelConfig::default()
    }
}

/// Segments a synthetic sequence twice, once with target IDs relabelled by
/// a cyclic permutation. Returns the number of mask pixels that disagree
/// after undoing the relabelling, and the largest probability difference.
pub fn equivariance(frames: usize, targets: usize, size: usize, seed: u64) -> Result<(usize, f64)> {
    equivariance_with(small_model(size), &PipelineConfig::default(), frames, targets, seed)
}

pub fn equivariance_with(
    model: ModelConfig,
    cfg: &PipelineConfig,
    frames: usize,
    targets: usize,
    seed: u64,
) -> Result<(usize, f64)> {
    let weights = ModelWeights::random(model, seed)?;
    let seq = generate_sequence(seed, frames, targets, model.height, model.width)?;
    let perm: Vec<usize> = (1..=targets).map(|j| j % targets + 1).collect();
    let mut plain = initialize_memories(&seq.frames[0], &seq.masks[0], &weights, cfg)?;
    let mut relabelled = initialize_memories(&seq.frames[0], &seq.masks[0].permuted(&perm)?, &weights, cfg)?;
    let (mut mismatched, mut prob_err) = (0usize, 0.0f64);
    let plane = model.height * model.width;
    for (k, frame) in seq.frames.iter().enumerate().skip(1) {
        let a = segment_frame(frame, k, &mut plain, &weights, cfg)?;
        let b = segment_frame(frame, k, &mut relabelled, &weights, cfg)?;
        let expected = a.masks.permuted(&perm)?;
        mismatched += expected.ids().iter().zip(b.masks.ids()).filter(|(x, y)| x != y).count();
        let slice = |t: &Tensor, id: usize| t.data()[id * plane..(id + 1) * plane].to_vec();
        // ID 0 is background and maps to itself.
        for (src, dst) in std::iter::once((0, 0)).chain(perm.iter().enumerate().map(|(j, &p)| (j + 1, p))) {
            let (pa, pb) = (slice(&a.probs, src), slice(&b.probs, dst));
            prob_err = prob_err.max(pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
        }
    }
    Ok((mismatched, prob_err))
}

fn check_pipeline_audit() -> Result<Measured> {
    let model = small_model(32);
    let weights = ModelWeights::random(model, 15)?;
    let seq = generate_sequence(15, 8, 2, 32, 32)?;
    let mut failures = 0;
    for mode in [AttentionMode::Full, AttentionMode::NoObject, AttentionMode::NoSpatial, AttentionMode::Joint] {
        let cfg = PipelineConfig { mode, ..PipelineConfig::default() };
        let mut mem = initialize_memories(&seq.frames[0], &seq.masks[0], &weights, &cfg)?;
        for (k, frame) in seq.frames.iter().enumerate().skip(1) {
            let out = segment_frame(frame, k, &mut mem, &weights, &cfg)?;
            failures += usize::from(out.masks.ids().iter().any(|&v| v > 2));
            failures += usize::from(mem.audit().is_err());
            failures +=
                usize::from(mem.spatial.len() > cfg.spatial_capacity || mem.temporal.len() > cfg.temporal_capacity);
        }
    }
    Ok(exact(failures, "8 frames in every attention mode"))
}

/// Pixels where a generated mask disagrees with the analytic layout.
pub fn synthetic_motion_failures(frames: usize, seed: u64) -> Result<usize> {
    let (h, w) = (40, 48);
    let seq = generate_sequence(seed, frames, 3, h, w)?;
    let mut failures = 0;
    for (k, mask) in seq.masks.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let expected = (0..3)
                    .rev()
                    .find(|&o| {
                        let spec = &seq.objects[o];
                        let (py, px) = spec.position(k, h, w);
                        let (dy, dx) = ((y + h - py) % h, (x + w - px) % w);
                        match spec.shape {
                            Shape::Rect { height, width } => dy < height && dx < width,
                            Shape::Disk { radius } => {
                                let (ty, tx) = (dy.min(h - dy), dx.min(w - dx));
                                ty * ty + tx * tx <= radius * radius
                            }
                        }
                    })
                    .map_or(0, |o| o as u8 + 1);
                failures += usize::from(mask.at(y, x) != expected);
            }
        }
        let frame: &Frame = &seq.frames[k];
        failures += usize::from((frame.height(), frame.width()) != (h, w));
    }
    Ok(failures)
}
