//! ID association: affinity between the test features and memorized keys,
//! per-target readout of ID values, decoding and soft aggregation.

mod aggregate;
mod decoder;

pub use aggregate::{aggregate, aggregate_on_tape, Aggregated};
pub use decoder::{decode, DecoderWeights, ResidualBlock, DECODER_WIDTH};

use crate::embedding::FeatureMap;
use crate::error::{Result, StmaError};
use crate::memory::{KeyValue, TemporalMemory, UsageUpdate};
use crate::tensor::{ops, Tensor};

/// Similarity used for affinity logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Similarity {
    /// `q·k / √C`.
    #[default]
    Dot,
    /// `−‖q − k‖² / √C`.
    NegativeL2,
}

impl std::str::FromStr for Similarity {
    type Err = StmaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(Self::Dot),
            "l2" => Ok(Self::NegativeL2),
            other => Err(StmaError::Parse(format!("unknown similarity '{other}'"))),
        }
    }
}

impl std::fmt::Display for Similarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Dot => "dot",
            Self::NegativeL2 => "l2",
        })
    }
}

/// Row-stochastic `[N × (T·N)]` weights; column block `t` belongs to memory
/// entry `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub weights: Tensor,
    pub entry_tokens: usize,
}

impl AffinityMatrix {
    pub fn new(weights: Tensor, entry_tokens: usize) -> Result<Self> {
        let (_, cols) = weights.dims2()?;
        if entry_tokens == 0 || cols % entry_tokens != 0 {
            return Err(StmaError::contract(format!("affinity has {cols} columns, not a multiple of {entry_tokens}")));
        }
        Ok(Self { weights, entry_tokens })
    }

    pub fn entries(&self) -> usize {
        self.weights.shape()[1] / self.entry_tokens
    }

    /// Total weight each entry's columns received.
    pub fn column_mass(&self) -> Vec<f64> {
        let (rows, cols) = self.weights.dims2().expect("matrix");
        let mut mass = vec![0.0; self.entries()];
        for r in 0..rows {
            let row = &self.weights.data()[r * cols..(r + 1) * cols];
            for (t, block) in row.chunks_exact(self.entry_tokens).enumerate() {
                mass[t] += block.iter().sum::<f64>();
            }
        }
        mass
    }
}

fn stacked_keys(mem: &TemporalMemory<KeyValue>) -> Result<Tensor> {
    if mem.is_empty() {
        return Err(StmaError::contract("temporal memory is empty; encode frame 0 first"));
    }
    let keys: Vec<&Tensor> = mem.entries().iter().map(|e| &e.payload.key).collect();
    ops::concat_rows(&keys)
}

/// Softmax affinity of every test token over all memorized key tokens, and
/// the per-entry usage it implies.
pub fn affinity(
    test: &FeatureMap,
    mem: &TemporalMemory<KeyValue>,
    similarity: Similarity,
) -> Result<(AffinityMatrix, UsageUpdate)> {
    let keys = stacked_keys(mem)?;
    let entry_tokens = mem.entries()[0].payload.tokens();
    let c = test.channels();
    if keys.shape()[1] != c {
        return Err(StmaError::dim("affinity", test.tokens.shape(), keys.shape()));
    }
    let scale = 1.0 / (c as f64).sqrt();
    let dots = ops::matmul(&test.tokens, &ops::transpose(&keys)?)?;
    let logits = match similarity {
        Similarity::Dot => ops::scale(&dots, scale),
        Similarity::NegativeL2 => {
            let sq = |t: &Tensor| -> Vec<f64> {
                let (r, _) = t.dims2().expect("matrix");
                (0..r).map(|i| t.row(i).iter().map(|v| v * v).sum()).collect()
            };
            let (qn, kn) = (sq(&test.tokens), sq(&keys));
            let cols = kn.len();
            Tensor::from_fn(dots.shape(), |i| {
                let (r, k) = (i / cols, i % cols);
                -(qn[r] - 2.0 * dots.data()[i] + kn[k]) * scale
            })
        }
    };
    let aff = AffinityMatrix::new(ops::softmax_rows(&logits)?, entry_tokens)?;
    let usage = UsageUpdate::new(aff.column_mass())?;
    Ok((aff, usage))
}

/// Per-target readout `[n×N×C_v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutFeatures {
    pub per_target: Tensor,
}

impl ReadoutFeatures {
    pub fn targets(&self) -> usize {
        self.per_target.shape()[0]
    }

    pub fn target(&self, j: usize) -> Result<Tensor> {
        self.per_target.outer(j)
    }
}

/// `F_R[j] = A · [values_1[j]; …; values_T[j]]`.
pub fn readout(aff: &AffinityMatrix, mem: &TemporalMemory<KeyValue>) -> Result<ReadoutFeatures> {
    if aff.entries() != mem.len() {
        return Err(StmaError::contract(format!(
            "affinity covers {} entries, memory holds {}",
            aff.entries(),
            mem.len()
        )));
    }
    let first = &mem.entries().first().ok_or_else(|| StmaError::contract("temporal memory is empty"))?.payload;
    if first.tokens() != aff.entry_tokens {
        return Err(StmaError::dim("readout", aff.weights.shape(), first.key.shape()));
    }
    let (n, tokens, cv) = (first.targets(), first.tokens(), first.value_channels());
    let mut planes = Vec::with_capacity(n);
    for j in 0..n {
        let mut stacked = Vec::with_capacity(mem.len() * tokens * cv);
        for e in mem.entries() {
            stacked.extend_from_slice(e.payload.target_values(j));
        }
        let values = Tensor::new(vec![mem.len() * tokens, cv], stacked)?;
        planes.push(ops::matmul(&aff.weights, &values)?);
    }
    Ok(ReadoutFeatures { per_target: Tensor::stack(&planes)? })
}
