//! Dual memory: a spatial bank of reference frames and a temporal bank of
//! keys with per-target ID values.

mod spatial;
mod temporal;

use rand::Rng;
use rayon::prelude::*;

pub use spatial::{SpatialEntry, SpatialMemory, SpatialOutcome};
pub use temporal::{EntryPayload, KeyValue, TemporalEntry, TemporalMemory, UsageUpdate};

use crate::conv::{Conv2d, FeatureGrid, Linear};
use crate::embedding::{FeatureMap, Frame};
use crate::error::{Result, StmaError};
use crate::masks::TargetMasks;
use crate::stml::ObjectFeatures;
use crate::tensor::Tensor;

/// What the spatial bank keeps per reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFrame {
    pub features: FeatureMap,
    pub frame: Frame,
}

impl SpatialMemory<ReferenceFrame> {
    /// Reference maps in STML order: pinned first, then the queue.
    pub fn reference_maps(&self) -> Result<Vec<FeatureMap>> {
        Ok(self.references()?.into_iter().map(|e| e.payload.features.clone()).collect())
    }
}

pub const ENCODER_WIDTHS: [usize; 4] = [16, 16, 32, 32];

/// Four 3×3 stride-2 convolutions from RGB plus one mask plane down to the
/// 1/16 token grid, ReLU between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct IdEncoder {
    pub layers: Vec<Conv2d>,
}

impl IdEncoder {
    pub fn random(rng: &mut impl Rng, value_channels: usize) -> Self {
        let widths = Self::widths(value_channels);
        let layers = widths.windows(2).map(|w| Conv2d::random(rng, w[0], w[1], 3, 2)).collect();
        Self { layers }
    }

    pub fn zeros(value_channels: usize) -> Self {
        let widths = Self::widths(value_channels);
        let layers = widths.windows(2).map(|w| Conv2d::zeros(w[0], w[1], 3, 2)).collect();
        Self { layers }
    }

    fn widths(value_channels: usize) -> [usize; 5] {
        [4, ENCODER_WIDTHS[0], ENCODER_WIDTHS[1], ENCODER_WIDTHS[2], value_channels]
    }

    pub fn value_channels(&self) -> usize {
        self.layers.last().map_or(0, Conv2d::out_channels)
    }

    /// Encodes a frame together with one binary mask plane.
    pub fn forward(&self, frame: &Frame, mask: &[bool]) -> Result<FeatureGrid> {
        let (h, w) = (frame.height(), frame.width());
        if mask.len() != h * w {
            return Err(StmaError::dim("id encoder", &[mask.len()], &[h, w]));
        }
        let plane = FeatureGrid::new(
            Tensor::new(vec![h * w, 1], mask.iter().map(|&b| f64::from(u8::from(b))).collect())?,
            h,
            w,
        )?;
        let mut x = FeatureGrid::concat_channels(&[&frame.to_grid(), &plane])?;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x)?;
            if i + 1 < self.layers.len() {
                x = x.relu();
            }
        }
        Ok(x)
    }
}

/// Per-target ID values `[n×N×C_v]`: target `j` is encoded from the frame and
/// the binary mask of ID `j`.
pub fn encode_id_values(frame: &Frame, masks: &TargetMasks, n: usize, encoder: &IdEncoder) -> Result<Tensor> {
    if (masks.height(), masks.width()) != (frame.height(), frame.width()) {
        return Err(StmaError::dim(
            "encode_id_values",
            &[frame.height(), frame.width()],
            &[masks.height(), masks.width()],
        ));
    }
    if let Some(&bad) = masks.ids().iter().find(|&&id| id as usize > n) {
        return Err(StmaError::contract(format!("mask holds ID {bad} but n = {n}")));
    }
    if n == 0 {
        return Err(StmaError::contract("encode_id_values needs at least one target"));
    }
    if !frame.height().is_multiple_of(16) || !frame.width().is_multiple_of(16) {
        return Err(StmaError::contract("frame sides must be multiples of 16"));
    }
    let grids: Vec<Tensor> = (1..=n)
        .into_par_iter()
        .map(|j| encoder.forward(frame, &masks.binary(j)).map(|g| g.tokens))
        .collect::<Result<_>>()?;
    Tensor::stack(&grids)
}

/// Elementwise max of target `j`'s values over every entry and position,
/// `[n×C_v]` before projection.
pub fn pooled_id_values(mem: &TemporalMemory<KeyValue>, n: usize) -> Result<Tensor> {
    let first =
        mem.entries().first().ok_or_else(|| StmaError::contract("temporal memory is empty; encode frame 0 first"))?;
    if first.payload.targets() != n {
        return Err(StmaError::contract(format!("memory holds {} targets, asked for {n}", first.payload.targets())));
    }
    let cv = first.payload.value_channels();
    let mut pooled = vec![f64::NEG_INFINITY; n * cv];
    for e in mem.entries() {
        for j in 0..n {
            for row in e.payload.target_values(j).chunks_exact(cv) {
                for (dst, &v) in pooled[j * cv..(j + 1) * cv].iter_mut().zip(row) {
                    *dst = dst.max(v);
                }
            }
        }
    }
    Tensor::new(vec![n, cv], pooled)
}

/// Object features: pooled ID values projected to the STML width.
pub fn object_features_from_memory(
    mem: &TemporalMemory<KeyValue>,
    n: usize,
    projection: &Linear,
) -> Result<ObjectFeatures> {
    ObjectFeatures::new(projection.apply(&pooled_id_values(mem, n)?)?)
}
