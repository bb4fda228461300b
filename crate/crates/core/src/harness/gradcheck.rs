//! Analytic gradients from the tape against central differences.

use rand::seq::index::sample;
use rand::Rng;

use crate::embedding::FeatureMap;
use crate::error::Result;
use crate::idassoc::aggregate;
use crate::init::{seeded_rng, uniform, SeededRng};
use crate::masks::TargetMasks;
use crate::oracle::{central_difference, relative_error};
use crate::stml::{
    stml_block, stml_block_on_tape, BlockConfig, ObjectFeatures, StateVars, StmlState, StmlWeights, WeightVars,
};
use crate::tensor::{Tape, Tensor, Var};

use super::losses::{
    bootstrapped_ce, bootstrapped_ce_from_logits, combined_loss, combined_loss_from_logits, dice_loss, dice_on_tape,
};

pub const FD_STEP: f64 = 1e-5;
pub const PROBES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub probes: usize,
    pub max_rel_error: f64,
}

impl GradReport {
    fn merge(self, other: GradReport) -> GradReport {
        GradReport { probes: self.probes + other.probes, max_rel_error: self.max_rel_error.max(other.max_rel_error) }
    }
}

fn probe(rng: &mut impl Rng, x: &Tensor, analytic: &Tensor, count: usize, f: impl Fn(&Tensor) -> f64) -> GradReport {
    let count = count.min(x.numel());
    let mut worst: f64 = 0.0;
    for k in sample(rng, x.numel(), count) {
        let numeric = central_difference(x, k, FD_STEP, &f);
        worst = worst.max(relative_error(analytic.data()[k], numeric));
    }
    GradReport { probes: count, max_rel_error: worst }
}

/// A random block input: `tokens` rows per map, `m` references, `n` objects.
pub fn random_state(rng: &mut SeededRng, tokens: usize, c: usize, m: usize, n: usize) -> Result<StmlState> {
    let fm = |rng: &mut SeededRng| FeatureMap::new(uniform(rng, &[tokens, c], -1.0, 1.0), tokens, 1);
    let test = fm(rng)?;
    let references = (0..m).map(|_| fm(rng)).collect::<Result<_>>()?;
    Ok(StmlState { test, references, objects: ObjectFeatures::new(uniform(rng, &[n, c], -1.0, 1.0))? })
}

fn weighted_sum(state: &StmlState, r: &[Tensor]) -> f64 {
    let mut parts = vec![&state.objects.vectors];
    parts.extend(state.references.iter().map(|f| &f.tokens));
    parts.push(&state.test.tokens);
    parts.iter().zip(r).map(|(t, w)| t.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>()).sum()
}

/// One full-mode block; loss is a random linear functional of every output
/// stream. Probes inputs of all streams and the shared projections.
pub fn stml_block_gradients(seed: u64) -> Result<GradReport> {
    let mut rng = seeded_rng(seed);
    let (tokens, c, m, n) = (4, 8, 2, 2);
    let state = random_state(&mut rng, tokens, c, m, n)?;
    let w = StmlWeights::random(&mut rng, c, 2)?;
    let cfg = BlockConfig::default();
    let mut r = vec![uniform(&mut rng, &[n, c], -1.0, 1.0)];
    for _ in 0..=m {
        r.push(uniform(&mut rng, &[tokens, c], -1.0, 1.0));
    }

    let mut tape = Tape::new();
    let sv = StateVars::record(&mut tape, &state, true);
    let wv = WeightVars::record(&mut tape, &w, true);
    let out = stml_block_on_tape(&mut tape, &sv, &wv, cfg)?;
    let mut outs = vec![out.objects];
    outs.extend(&out.references);
    outs.push(out.test);
    let mut total: Option<Var> = None;
    for (v, rv) in outs.into_iter().zip(&r) {
        let rc = tape.constant(rv.clone());
        let prod = tape.mul(v, rc)?;
        let s = tape.sum(prod)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    let grads = tape.backward(total.expect("at least one stream"))?;

    let loss_of_state = |s: &StmlState| weighted_sum(&stml_block(s, &w, cfg).expect("block"), &r);
    let mut report = GradReport { probes: 0, max_rel_error: 0.0 };
    let test_grad = grads.get(sv.test)?.clone();
    report = report.merge(probe(&mut rng, &state.test.tokens, &test_grad, 8, |t| {
        let mut s = state.clone();
        s.test.tokens = t.clone();
        loss_of_state(&s)
    }));
    let ref_grad = grads.get(sv.references[1])?.clone();
    report = report.merge(probe(&mut rng, &state.references[1].tokens, &ref_grad, 6, |t| {
        let mut s = state.clone();
        s.references[1].tokens = t.clone();
        loss_of_state(&s)
    }));
    let obj_grad = grads.get(sv.objects)?.clone();
    report = report.merge(probe(&mut rng, &state.objects.vectors, &obj_grad, 6, |t| {
        let mut s = state.clone();
        s.objects.vectors = t.clone();
        loss_of_state(&s)
    }));
    type Slot = fn(&mut StmlWeights) -> &mut Tensor;
    let slots: [(Var, Slot); 6] = [
        (wv.w_q, |w| &mut w.w_q),
        (wv.w_k, |w| &mut w.w_k),
        (wv.w_v, |w| &mut w.w_v),
        (wv.w_o, |w| &mut w.w_o),
        (wv.ln_attn_gamma, |w| &mut w.ln_attn.gamma),
        (wv.ffn_in_w, |w| &mut w.ffn_in.weight),
    ];
    for (var, slot) in slots {
        let g = grads.get(var)?.clone();
        let mut base = w.clone();
        let x = slot(&mut base).clone();
        report = report.merge(probe(&mut rng, &x, &g, 2, |t| {
            let mut ww = w.clone();
            *slot(&mut ww) = t.clone();
            weighted_sum(&stml_block(&state, &ww, cfg).expect("block"), &r)
        }));
    }
    Ok(report)
}

/// Dice with respect to probabilities on an 8×8 instance.
pub fn dice_gradients(seed: u64) -> Result<GradReport> {
    let mut rng = seeded_rng(seed);
    let probs = uniform(&mut rng, &[8, 8], 0.05, 0.95);
    let gt = Tensor::from_fn(&[8, 8], |_| f64::from(rng.gen_bool(0.4)));
    let mut tape = Tape::new();
    let p = tape.leaf(probs.clone());
    let g = tape.constant(gt.clone());
    let loss = dice_on_tape(&mut tape, p, g)?;
    let grads = tape.backward(loss)?;
    let analytic = grads.get(p)?.clone();
    Ok(probe(&mut rng, &probs, &analytic, PROBES, |t| dice_loss(t, &gt).expect("dice")))
}

fn random_instance(rng: &mut impl Rng, n: usize, h: usize, w: usize) -> Result<(Tensor, TargetMasks)> {
    let logits = uniform(rng, &[n, h * w], -3.0, 3.0);
    let ids = (0..h * w).map(|_| rng.gen_range(0..=n as u8)).collect();
    Ok((logits, TargetMasks::new(h, w, n, ids)?))
}

fn logits_loss_report(
    seed: u64,
    keep: f64,
    on_tape: impl Fn(&mut Tape, Var, &TargetMasks, f64) -> Result<Var>,
    plain: impl Fn(&Tensor, &TargetMasks, f64) -> Result<f64>,
) -> Result<GradReport> {
    let mut rng = seeded_rng(seed);
    let (n, h, w) = (2, 8, 8);
    let (logits, gt) = random_instance(&mut rng, n, h, w)?;
    let mut tape = Tape::new();
    let l = tape.leaf(logits.clone());
    let loss = on_tape(&mut tape, l, &gt, keep)?;
    let analytic = tape.backward(loss)?.get(l)?.clone();
    Ok(probe(&mut rng, &logits, &analytic, PROBES, |t| {
        let probs = aggregate(&t.reshape(&[n, h, w]).expect("shape")).expect("aggregate").probs;
        plain(&probs, &gt, keep).expect("loss")
    }))
}

/// Bootstrapped CE with respect to logits through soft aggregation.
pub fn bootstrapped_ce_gradients(seed: u64, keep_fraction: f64) -> Result<GradReport> {
    logits_loss_report(seed, keep_fraction, bootstrapped_ce_from_logits, bootstrapped_ce)
}

/// Combined loss with respect to logits through soft aggregation.
pub fn combined_gradients(seed: u64, keep_fraction: f64) -> Result<GradReport> {
    logits_loss_report(seed, keep_fraction, combined_loss_from_logits, combined_loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_gradients_agree() {
        for r in [
            stml_block_gradients(1).unwrap(),
            dice_gradients(2).unwrap(),
            bootstrapped_ce_gradients(3, 0.25).unwrap(),
            combined_gradients(4, 0.25).unwrap(),
        ] {
            assert!(r.probes >= 32, "{r:?}");
            assert!(r.max_rel_error < 1e-5, "{r:?}");
        }
    }
}
