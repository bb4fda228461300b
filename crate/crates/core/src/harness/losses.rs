//! Dice, bootstrapped cross entropy and their equal-weight sum, each in a
//! plain form and a form recorded on a [`Tape`] for gradient checks.

use crate::error::{Result, StmaError};
use crate::idassoc::aggregate_on_tape;
use crate::masks::TargetMasks;
use crate::tensor::{Tape, Tensor, Var};

pub const DICE_EPS: f64 = 1.0;
pub const DEFAULT_KEEP_FRACTION: f64 = 0.25;
/// Probabilities are floored here before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
const NORMALIZATION_TOL: f64 = 1e-9;

/// `1 − (2·Σp·g + ε) / (Σp + Σg + ε)`.
pub fn dice_loss(probs: &Tensor, gt: &Tensor) -> Result<f64> {
    if probs.shape() != gt.shape() {
        return Err(StmaError::dim("dice_loss", probs.shape(), gt.shape()));
    }
    if probs.data().iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(StmaError::contract("dice_loss needs probabilities in [0, 1]"));
    }
    let (mut pg, mut sp, mut sg) = (0.0, 0.0, 0.0);
    for (&p, &g) in probs.data().iter().zip(gt.data()) {
        pg += p * g;
        sp += p;
        sg += g;
    }
    Ok(1.0 - (2.0 * pg + DICE_EPS) / (sp + sg + DICE_EPS))
}

pub fn dice_on_tape(tape: &mut Tape, probs: Var, gt: Var) -> Result<Var> {
    let pg = tape.mul(probs, gt)?;
    let pg = tape.sum(pg)?;
    let num = tape.scale(pg, 2.0)?;
    let num = tape.add_scalar(num, DICE_EPS)?;
    let sp = tape.sum(probs)?;
    let sg = tape.sum(gt)?;
    let den = tape.add(sp, sg)?;
    let den = tape.add_scalar(den, DICE_EPS)?;
    let ratio = tape.div(num, den)?;
    let neg = tape.scale(ratio, -1.0)?;
    tape.add_scalar(neg, 1.0)
}

fn check_distribution(probs: &Tensor, gt: &TargetMasks) -> Result<(usize, usize)> {
    let classes = probs.shape()[0];
    let hw = gt.height() * gt.width();
    if probs.numel() != classes * hw || classes < 2 {
        return Err(StmaError::dim("bootstrapped_ce", probs.shape(), &[gt.targets() + 1, gt.height(), gt.width()]));
    }
    if gt.ids().iter().any(|&id| id as usize >= classes) {
        return Err(StmaError::contract("ground truth holds IDs beyond the probability planes"));
    }
    let d = probs.data();
    for px in 0..hw {
        let s: f64 = (0..classes).map(|k| d[k * hw + px]).sum();
        if (s - 1.0).abs() > NORMALIZATION_TOL || (0..classes).any(|k| d[k * hw + px] < 0.0) {
            return Err(StmaError::contract(format!("probabilities at pixel {px} sum to {s}, not 1")));
        }
    }
    Ok((classes, hw))
}

/// Indices of the `ceil(keep·len)` largest losses, ties to the smaller index.
pub fn hardest_pixels(nll: &[f64], keep_fraction: f64) -> Result<Vec<usize>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(StmaError::contract(format!("keep fraction {keep_fraction} is outside (0, 1]")));
    }
    let k = ((keep_fraction * nll.len() as f64).ceil() as usize).clamp(1, nll.len());
    let mut order: Vec<usize> = (0..nll.len()).collect();
    order.sort_by(|&a, &b| nll[b].total_cmp(&nll[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

fn true_class_nll(probs: &Tensor, gt: &TargetMasks, hw: usize) -> Vec<f64> {
    let d = probs.data();
    gt.ids().iter().enumerate().map(|(px, &id)| -d[id as usize * hw + px].max(PROB_FLOOR).ln()).collect()
}

/// Mean negative log-likelihood of the true ID over the hardest pixels.
pub fn bootstrapped_ce(probs: &Tensor, gt: &TargetMasks, keep_fraction: f64) -> Result<f64> {
    let (_, hw) = check_distribution(probs, gt)?;
    let nll = true_class_nll(probs, gt, hw);
    let keep = hardest_pixels(&nll, keep_fraction)?;
    Ok(keep.iter().map(|&i| nll[i]).sum::<f64>() / keep.len() as f64)
}

/// Tape form over probabilities `[(n+1) × HW]`. The kept pixel set is chosen
/// from the recorded values and held fixed.
pub fn bootstrapped_ce_on_tape(tape: &mut Tape, probs: Var, gt: &TargetMasks, keep_fraction: f64) -> Result<Var> {
    let value = tape.value(probs)?.clone();
    let (classes, hw) = check_distribution(&value, gt)?;
    let onehot = Tensor::from_fn(&[classes, hw], |i| f64::from(gt.ids()[i % hw] as usize == i / hw));
    let onehot = tape.constant(onehot);
    let picked = tape.mul(probs, onehot)?;
    let ones = tape.constant(Tensor::full(&[1, classes], 1.0));
    let p_true = tape.matmul(ones, picked)?;
    let p_true = tape.clamp_min(p_true, PROB_FLOOR)?;
    let logp = tape.log(p_true)?;

    let keep = hardest_pixels(&true_class_nll(&value, gt, hw), keep_fraction)?;
    let mut weights = vec![0.0; hw];
    for &i in &keep {
        weights[i] = -1.0 / keep.len() as f64;
    }
    let weights = tape.constant(Tensor::new(vec![1, hw], weights)?);
    let weighted = tape.mul(logp, weights)?;
    tape.sum(weighted)
}

fn binary_plane(gt: &TargetMasks, target: usize) -> Tensor {
    Tensor::from_fn(&[gt.height(), gt.width()], |i| f64::from(gt.ids()[i] as usize == target))
}

/// `0.5 · bootstrapped_ce + 0.5 · mean_j dice(p_j, gt_j)`.
pub fn combined_loss(probs: &Tensor, gt: &TargetMasks, keep_fraction: f64) -> Result<f64> {
    let ce = bootstrapped_ce(probs, gt, keep_fraction)?;
    let classes = probs.shape()[0];
    let mut dice = 0.0;
    for j in 1..classes {
        dice += dice_loss(&probs.outer(j)?, &binary_plane(gt, j))?;
    }
    Ok(0.5 * ce + 0.5 * (dice / (classes - 1) as f64))
}

pub fn combined_loss_on_tape(tape: &mut Tape, probs: Var, gt: &TargetMasks, keep_fraction: f64) -> Result<Var> {
    let ce = bootstrapped_ce_on_tape(tape, probs, gt, keep_fraction)?;
    let (classes, hw) = tape.value(probs)?.dims2()?;
    let mut dice_sum: Option<Var> = None;
    for j in 1..classes {
        let row = tape.slice_rows(probs, j, j + 1)?;
        let g = tape.constant(binary_plane(gt, j).reshape(&[1, hw])?);
        let term = dice_on_tape(tape, row, g)?;
        dice_sum = Some(match dice_sum {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    let dice_sum = dice_sum.ok_or_else(|| StmaError::contract("combined loss needs at least one target"))?;
    let half_ce = tape.scale(ce, 0.5)?;
    let half_dice = tape.scale(dice_sum, 0.5 / (classes - 1) as f64)?;
    tape.add(half_ce, half_dice)
}

/// Combined loss as a function of raw logits `[n × HW]` through soft
/// aggregation.
pub fn combined_loss_from_logits(tape: &mut Tape, logits: Var, gt: &TargetMasks, keep_fraction: f64) -> Result<Var> {
    let probs = aggregate_on_tape(tape, logits)?;
    combined_loss_on_tape(tape, probs, gt, keep_fraction)
}

/// Bootstrapped CE as a function of raw logits `[n × HW]`.
pub fn bootstrapped_ce_from_logits(tape: &mut Tape, logits: Var, gt: &TargetMasks, keep_fraction: f64) -> Result<Var> {
    let probs = aggregate_on_tape(tape, logits)?;
    bootstrapped_ce_on_tape(tape, probs, gt, keep_fraction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::idassoc::aggregate;
    use crate::init::{seeded_rng, uniform};

    fn half_mask(h: usize, w: usize) -> TargetMasks {
        TargetMasks::new(h, w, 1, (0..h * w).map(|i| u8::from(i % w < w / 2)).collect()).unwrap()
    }

    #[test]
    fn dice_perfect_and_total_miss() {
        let gt = binary_plane(&half_mask(4, 4), 1);
        assert_eq!(dice_loss(&gt, &gt).unwrap(), 0.0);
        let miss = Tensor::from_fn(&[4, 4], |i| 1.0 - gt.data()[i]);
        // S = 8 foreground pixels in each; no overlap.
        assert_eq!(dice_loss(&miss, &gt).unwrap(), 1.0 - 1.0 / 17.0);
        assert!(dice_loss(&Tensor::full(&[4, 4], 1.5), &gt).is_err());
    }

    #[test]
    fn ce_perfect_is_zero() {
        let gt = half_mask(4, 4);
        let probs = Tensor::from_fn(&[2, 4, 4], |i| f64::from(gt.ids()[i % 16] as usize == i / 16));
        assert_eq!(bootstrapped_ce(&probs, &gt, 0.25).unwrap(), 0.0);
        assert_eq!(combined_loss(&probs, &gt, 0.25).unwrap(), 0.0);
    }

    #[test]
    fn ce_full_keep_is_plain_mean() {
        let gt = TargetMasks::new(3, 3, 2, vec![0, 1, 2, 2, 1, 0, 0, 0, 1]).unwrap();
        let probs = aggregate(&uniform(&mut seeded_rng(1), &[2, 3, 3], -3.0, 3.0)).unwrap().probs;
        let plain: f64 = (0..9).map(|px| -probs.data()[gt.ids()[px] as usize * 9 + px].ln()).sum::<f64>() / 9.0;
        assert!((bootstrapped_ce(&probs, &gt, 1.0).unwrap() - plain).abs() < 1e-15);
    }

    #[test]
    fn ce_uniform_is_ln3() {
        let gt = TargetMasks::new(2, 5, 2, vec![0, 1, 2, 0, 1, 2, 0, 1, 2, 0]).unwrap();
        let probs = Tensor::full(&[3, 2, 5], 1.0 / 3.0);
        for keep in [0.1, 0.25, 0.5, 1.0] {
            assert!((bootstrapped_ce(&probs, &gt, keep).unwrap() - 3f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn ce_rejects_unnormalised() {
        let gt = half_mask(2, 2);
        assert!(bootstrapped_ce(&Tensor::full(&[2, 2, 2], 0.6), &gt, 0.5).is_err());
        assert!(bootstrapped_ce(&Tensor::full(&[2, 2, 2], 0.5), &gt, 0.0).is_err());
    }

    #[test]
    fn hardest_pixels_break_ties_by_index() {
        assert_eq!(hardest_pixels(&[1.0, 3.0, 3.0, 0.5], 0.5).unwrap(), vec![1, 2]);
        assert_eq!(hardest_pixels(&[2.0, 2.0, 2.0], 0.1).unwrap(), vec![0]);
    }

    #[test]
    fn combined_is_half_and_half() {
        let gt = TargetMasks::new(4, 4, 2, (0..16).map(|i| (i % 3) as u8).collect()).unwrap();
        let probs = aggregate(&uniform(&mut seeded_rng(2), &[2, 4, 4], -2.0, 2.0)).unwrap().probs;
        let ce = bootstrapped_ce(&probs, &gt, 0.25).unwrap();
        let d1 = dice_loss(&probs.outer(1).unwrap(), &binary_plane(&gt, 1)).unwrap();
        let d2 = dice_loss(&probs.outer(2).unwrap(), &binary_plane(&gt, 2)).unwrap();
        assert_eq!(combined_loss(&probs, &gt, 0.25).unwrap(), 0.5 * ce + 0.5 * ((d1 + d2) / 2.0));
    }

    #[test]
    fn tape_forms_match_plain_values() {
        let gt = TargetMasks::new(4, 4, 2, (0..16).map(|i| (i % 3) as u8).collect()).unwrap();
        let logits = uniform(&mut seeded_rng(3), &[2, 4, 4], -2.0, 2.0);
        let probs = aggregate(&logits).unwrap().probs;
        let mut tape = Tape::new();
        let l = tape.leaf(logits.reshape(&[2, 16]).unwrap());
        let loss = combined_loss_from_logits(&mut tape, l, &gt, 0.25).unwrap();
        let got = tape.value(loss).unwrap().item().unwrap();
        assert!((got - combined_loss(&probs, &gt, 0.25).unwrap()).abs() < 1e-12);
    }
}
