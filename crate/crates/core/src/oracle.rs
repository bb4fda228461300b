//! Independent reference implementations used by the test suites and the
//! `verify` driver. Nothing here is called by the model code paths; each
//! oracle is written as the most direct computation of its quantity.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use crate::conv::{Conv2d, FeatureGrid};
use crate::tensor::Tensor;

/// Denominator floor for [`relative_error`]; below it the comparison is
/// effectively absolute.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

/// `|a − b| / max(|a|, |b|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Central difference `(f(x + h·e_k) − f(x − h·e_k)) / 2h`.
pub fn central_difference(x: &Tensor, k: usize, h: f64, f: impl Fn(&Tensor) -> f64) -> f64 {
    let mut plus = x.clone();
    plus.data_mut()[k] += h;
    let mut minus = x.clone();
    minus.data_mut()[k] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Nested-loop convolution straight from the definition.
pub fn direct_conv2d(input: &FeatureGrid, conv: &Conv2d) -> FeatureGrid {
    let (k, s, p) = (conv.kernel as isize, conv.stride as isize, conv.padding as isize);
    let c_in = conv.in_channels();
    let c_out = conv.out_channels();
    let oh = ((input.height as isize + 2 * p - k) / s + 1) as usize;
    let ow = ((input.width as isize + 2 * p - k) / s + 1) as usize;
    let mut out = vec![0.0; oh * ow * c_out];
    for oy in 0..oh {
        for ox in 0..ow {
            for co in 0..c_out {
                let mut acc = conv.bias.data()[co];
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = oy as isize * s + ky - p;
                        let ix = ox as isize * s + kx - p;
                        if iy < 0 || ix < 0 || iy >= input.height as isize || ix >= input.width as isize {
                            continue;
                        }
                        for ci in 0..c_in {
                            let x = input.tokens.at2(iy as usize * input.width + ix as usize, ci);
                            let w = conv.weight.at2(((ky * k + kx) as usize) * c_in + ci, co);
                            acc += x * w;
                        }
                    }
                }
                out[(oy * ow + ox) * c_out + co] = acc;
            }
        }
    }
    FeatureGrid::new(Tensor::new(vec![oh * ow, c_out], out).expect("shape"), oh, ow).expect("grid")
}

/// Scaled dot-product softmax attention over explicit rows, one query at a
/// time, with a per-(query, key) visibility predicate.
pub fn masked_attention_rows(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    scale: f64,
    visible: impl Fn(usize, usize) -> bool,
) -> Vec<Vec<f64>> {
    q.iter()
        .enumerate()
        .map(|(i, qi)| {
            let logits: Vec<Option<f64>> = k
                .iter()
                .enumerate()
                .map(|(j, kj)| visible(i, j).then(|| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale))
                .collect();
            let max = logits.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits.iter().map(|l| l.map_or(0.0, |l| (l - max).exp())).collect();
            let total: f64 = weights.iter().sum();
            let mut out = vec![0.0; v[0].len()];
            for (w, vj) in weights.iter().zip(v) {
                for (o, x) in out.iter_mut().zip(vj) {
                    *o += w / total * x;
                }
            }
            out
        })
        .collect()
}

pub fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    let (m, _) = t.dims2().expect("matrix");
    (0..m).map(|r| t.row(r).to_vec()).collect()
}

/// One step of a memory trace fed to [`ReferenceLfu`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceOp {
    Insert(usize),
    Touch(usize, f64),
}

/// Priority-queue LFU simulator with lazy deletion, written independently
/// of the temporal memory bank: the first inserted entry is pinned, new
/// entries start at the mean usage of current entries, and the victim is
/// the least-used unpinned entry, oldest first.
#[derive(Debug, Default)]
pub struct ReferenceLfu {
    capacity: usize,
    usage: BTreeMap<usize, f64>,
    pinned: Option<usize>,
    heap: BinaryHeap<Reverse<(OrdF64, usize)>>,
}

#[derive(Debug, Clone, Copy)]
struct OrdF64(f64);
impl PartialEq for OrdF64 {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}
impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl ReferenceLfu {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, ..Self::default() }
    }

    /// Applies one op; returns the evicted frame index, if any.
    pub fn apply(&mut self, op: TraceOp) -> Option<usize> {
        match op {
            TraceOp::Touch(frame, amount) => {
                if let Some(u) = self.usage.get_mut(&frame) {
                    *u += amount;
                    if Some(frame) != self.pinned {
                        self.heap.push(Reverse((OrdF64(*u), frame)));
                    }
                }
                None
            }
            TraceOp::Insert(frame) => {
                let baseline = if self.usage.is_empty() {
                    0.0
                } else {
                    self.usage.values().sum::<f64>() / self.usage.len() as f64
                };
                self.usage.insert(frame, baseline);
                if self.pinned.is_none() {
                    self.pinned = Some(frame);
                } else {
                    self.heap.push(Reverse((OrdF64(baseline), frame)));
                }
                if self.usage.len() <= self.capacity {
                    return None;
                }
                while let Some(Reverse((OrdF64(u), f))) = self.heap.pop() {
                    if self.usage.get(&f) == Some(&u) {
                        self.usage.remove(&f);
                        return Some(f);
                    }
                }
                None
            }
        }
    }

    /// Live entries as `(frame, usage)`, ascending by frame.
    pub fn entries(&self) -> Vec<(usize, f64)> {
        self.usage.iter().map(|(&f, &u)| (f, u)).collect()
    }
}
