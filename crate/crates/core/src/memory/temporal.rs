use crate::error::{Result, StmaError};
use crate::tensor::Tensor;

/// Payloads stored in a [`TemporalMemory`] must agree on geometry.
pub trait EntryPayload {
    fn check_compatible(&self, existing: &Self) -> Result<()>;
}

impl EntryPayload for () {
    fn check_compatible(&self, _: &Self) -> Result<()> {
        Ok(())
    }
}

/// Key grid `[N×C]` and per-target ID values `[n×N×C_v]` of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyValue {
    pub key: Tensor,
    pub values: Tensor,
}

impl KeyValue {
    pub fn new(key: Tensor, values: Tensor) -> Result<Self> {
        let (n_tokens, _) = key.dims2()?;
        if values.rank() != 3 || values.shape()[1] != n_tokens {
            return Err(StmaError::dim("temporal entry", key.shape(), values.shape()));
        }
        Ok(Self { key, values })
    }

    pub fn targets(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn tokens(&self) -> usize {
        self.key.shape()[0]
    }

    pub fn value_channels(&self) -> usize {
        self.values.shape()[2]
    }

    /// Rows `[N×C_v]` of target `j` (0-based).
    pub fn target_values(&self, j: usize) -> &[f64] {
        let block = self.tokens() * self.value_channels();
        &self.values.data()[j * block..(j + 1) * block]
    }
}

impl EntryPayload for KeyValue {
    fn check_compatible(&self, existing: &Self) -> Result<()> {
        if self.key.shape() != existing.key.shape() {
            return Err(StmaError::dim("temporal insert (key)", existing.key.shape(), self.key.shape()));
        }
        if self.values.shape() != existing.values.shape() {
            return Err(StmaError::dim("temporal insert (values)", existing.values.shape(), self.values.shape()));
        }
        Ok(())
    }
}

/// Per-entry usage increments, in entry order.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageUpdate {
    increments: Vec<f64>,
}

impl UsageUpdate {
    pub fn new(increments: Vec<f64>) -> Result<Self> {
        if increments.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(StmaError::contract("usage increments must be finite and nonnegative"));
        }
        Ok(Self { increments })
    }

    pub fn zeros(entries: usize) -> Self {
        Self { increments: vec![0.0; entries] }
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn total(&self) -> f64 {
        self.increments.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalEntry<P> {
    pub frame_idx: usize,
    pub usage: f64,
    pub pinned: bool,
    pub payload: P,
}

/// Key/value bank with least-frequently-used eviction.
///
/// A new entry starts at the mean usage of the entries already present. On
/// overflow the unpinned entry with the smallest usage goes, the oldest one
/// on ties. The first entry ever inserted is pinned.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalMemory<P = KeyValue> {
    capacity: usize,
    entries: Vec<TemporalEntry<P>>,
    pin_first: bool,
    pin_taken: bool,
}

impl<P: EntryPayload> TemporalMemory<P> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity < 2 {
            return Err(StmaError::contract("temporal memory needs capacity ≥ 2 (one slot is pinned)"));
        }
        Ok(Self { capacity, entries: Vec::new(), pin_first: true, pin_taken: false })
    }

    /// Plain LFU without the pinned first entry.
    pub fn unpinned(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(StmaError::contract("temporal memory needs capacity ≥ 1"));
        }
        Ok(Self { capacity, entries: Vec::new(), pin_first: false, pin_taken: false })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in insertion order.
    pub fn entries(&self) -> &[TemporalEntry<P>] {
        &self.entries
    }

    pub fn usages(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.usage).collect()
    }

    pub fn frame_indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.frame_idx).collect()
    }

    pub fn position_of(&self, frame_idx: usize) -> Option<usize> {
        self.entries.iter().position(|e| e.frame_idx == frame_idx)
    }

    /// Appends an entry and returns the evicted one, if any.
    pub fn insert(&mut self, frame_idx: usize, payload: P) -> Result<Option<TemporalEntry<P>>> {
        if let Some(last) = self.entries.last() {
            payload.check_compatible(&last.payload)?;
            if frame_idx <= last.frame_idx {
                return Err(StmaError::contract(format!(
                    "frame {frame_idx} is not after stored frame {}",
                    last.frame_idx
                )));
            }
        }
        let usage = if self.entries.is_empty() {
            0.0
        } else {
            self.entries.iter().map(|e| e.usage).sum::<f64>() / self.entries.len() as f64
        };
        let pinned = self.pin_first && !self.pin_taken;
        self.pin_taken |= pinned;
        self.entries.push(TemporalEntry { frame_idx, usage, pinned, payload });
        if self.entries.len() <= self.capacity {
            return Ok(None);
        }
        // Entries are in frame order, so the first minimum is the oldest.
        let victim = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.pinned)
            .min_by(|(_, a), (_, b)| a.usage.total_cmp(&b.usage))
            .map(|(i, _)| i)
            .expect("capacity ≥ 1 beyond the pin leaves a candidate");
        Ok(Some(self.entries.remove(victim)))
    }

    pub fn touch(&mut self, update: &UsageUpdate) -> Result<()> {
        if update.increments.len() != self.entries.len() {
            return Err(StmaError::contract(format!(
                "usage update has {} increments for {} entries",
                update.increments.len(),
                self.entries.len()
            )));
        }
        for (e, inc) in self.entries.iter_mut().zip(&update.increments) {
            e.usage += inc;
        }
        Ok(())
    }

    /// Checks capacity, single pin and frame ordering.
    pub fn audit(&self) -> Result<()> {
        if self.entries.len() > self.capacity {
            return Err(StmaError::contract("temporal memory over capacity"));
        }
        if self.entries.iter().filter(|e| e.pinned).count() != usize::from(self.pin_taken) {
            return Err(StmaError::contract("temporal memory lost its pinned entry"));
        }
        if self.entries.windows(2).any(|w| w[0].frame_idx >= w[1].frame_idx) {
            return Err(StmaError::contract("temporal entries out of frame order"));
        }
        if self.entries.iter().any(|e| e.usage.is_nan() || e.usage < 0.0) {
            return Err(StmaError::contract("negative or NaN usage"));
        }
        Ok(())
    }
}
