use crate::error::{Result, StmaError};
use crate::masks::TargetMasks;
use crate::tensor::{ops, Tape, Tensor, Var};

/// Hard mask plus the per-pixel distribution `[(n+1)×H×W]`, background first.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated {
    pub masks: TargetMasks,
    pub probs: Tensor,
}

/// Soft aggregation of `n` logit planes: `p_j = σ(l_j)`, background
/// `∏(1 − p_j)`, renormalised per pixel; argmax with ties to the smaller ID.
pub fn aggregate(logits: &Tensor) -> Result<Aggregated> {
    let [n, h, w] = logits.shape()[..] else {
        return Err(StmaError::contract(format!("expected [n, H, W] logits, got {:?}", logits.shape())));
    };
    if n == 0 {
        return Err(StmaError::contract("aggregate needs at least one target"));
    }
    if n > u8::MAX as usize {
        return Err(StmaError::contract("at most 255 targets fit an 8-bit mask"));
    }
    let hw = h * w;
    let p = ops::sigmoid(logits);
    let p = p.data();
    let mut probs = vec![0.0; (n + 1) * hw];
    let mut ids = vec![0u8; hw];
    let mut column = vec![0.0; n + 1];
    for px in 0..hw {
        column[0] = (0..n).map(|j| 1.0 - p[j * hw + px]).product();
        for j in 0..n {
            column[j + 1] = p[j * hw + px];
        }
        let z: f64 = column.iter().sum();
        let mut best = 0;
        for (k, v) in column.iter().enumerate() {
            let q = v / z;
            probs[k * hw + px] = q;
            if q > probs[best * hw + px] {
                best = k;
            }
        }
        ids[px] = best as u8;
    }
    Ok(Aggregated { masks: TargetMasks::new(h, w, n, ids)?, probs: Tensor::new(vec![n + 1, h, w], probs)? })
}

/// Differentiable aggregation of logits `[n × HW]` into probabilities
/// `[(n+1) × HW]`.
pub fn aggregate_on_tape(tape: &mut Tape, logits: Var) -> Result<Var> {
    let (n, _) = tape.value(logits)?.dims2()?;
    if n == 0 {
        return Err(StmaError::contract("aggregate needs at least one target"));
    }
    let p = tape.sigmoid(logits)?;
    let neg = tape.scale(p, -1.0)?;
    let one_minus = tape.add_scalar(neg, 1.0)?;
    let mut background = tape.slice_rows(one_minus, 0, 1)?;
    for j in 1..n {
        let row = tape.slice_rows(one_minus, j, j + 1)?;
        background = tape.mul(background, row)?;
    }
    let stacked = tape.concat_rows(&[background, p])?;
    let ones_row = tape.constant(Tensor::full(&[1, n + 1], 1.0));
    let ones_col = tape.constant(Tensor::full(&[n + 1, 1], 1.0));
    let z = tape.matmul(ones_row, stacked)?;
    let z = tape.matmul(ones_col, z)?;
    tape.div(stacked, z)
}
