//! The per-frame segmentation loop and its memory state.

use crate::embedding::{conv_stem, embed, Frame};
use crate::error::{Result, StmaError};
use crate::idassoc::{affinity, aggregate, decode, readout, Similarity};
use crate::masks::TargetMasks;
use crate::memory::{
    encode_id_values, object_features_from_memory, KeyValue, ReferenceFrame, SpatialMemory, TemporalMemory, UsageUpdate,
};
use crate::model::ModelWeights;
use crate::stml::{stml_forward, AttentionMode, BlockConfig, ObjectFeatures, StmlState};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub mode: AttentionMode,
    pub update_objects: bool,
    pub similarity: Similarity,
    pub spatial_capacity: usize,
    pub spatial_stride: usize,
    pub temporal_capacity: usize,
    /// Frames between temporal inserts; 1 stores every frame.
    pub temporal_stride: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: AttentionMode::Full,
            update_objects: true,
            similarity: Similarity::Dot,
            spatial_capacity: 4,
            spatial_stride: 3,
            temporal_capacity: 8,
            temporal_stride: 1,
        }
    }
}

impl PipelineConfig {
    fn block(&self) -> BlockConfig {
        BlockConfig { mode: self.mode, update_objects: self.update_objects }
    }
}

/// Both memory banks of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct Memories {
    pub spatial: SpatialMemory<ReferenceFrame>,
    pub temporal: TemporalMemory<KeyValue>,
    targets: usize,
    last_frame: Option<usize>,
}

impl Memories {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        if cfg.temporal_stride == 0 {
            return Err(StmaError::contract("temporal stride must be ≥ 1"));
        }
        Ok(Self {
            spatial: SpatialMemory::new(cfg.spatial_capacity, cfg.spatial_stride)?,
            temporal: TemporalMemory::new(cfg.temporal_capacity)?,
            targets: 0,
            last_frame: None,
        })
    }

    pub fn targets(&self) -> usize {
        self.targets
    }

    pub fn is_initialized(&self) -> bool {
        self.last_frame.is_some()
    }

    pub fn audit(&self) -> Result<()> {
        self.spatial.audit()?;
        self.temporal.audit()?;
        if self.is_initialized() {
            let pinned = self.spatial.pinned().map(|e| e.frame_idx);
            if pinned.is_none() || self.temporal.entries().first().map(|e| e.frame_idx) != pinned {
                return Err(StmaError::contract("the first frame is missing from a memory bank"));
            }
        }
        Ok(())
    }
}

/// Output of one segmented frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub masks: TargetMasks,
    pub probs: Tensor,
    pub usage: UsageUpdate,
}

fn references_for(mem: &Memories, cfg: &PipelineConfig) -> Result<Vec<crate::embedding::FeatureMap>> {
    if cfg.mode == AttentionMode::NoSpatial {
        return Ok(Vec::new());
    }
    mem.spatial.reference_maps()
}

/// Seeds both banks from the first frame and its ground truth.
pub fn initialize_memories(
    frame: &Frame,
    gt: &TargetMasks,
    weights: &ModelWeights,
    cfg: &PipelineConfig,
) -> Result<Memories> {
    let n = gt.targets();
    if n == 0 {
        return Err(StmaError::contract("the first mask must name at least one target"));
    }
    let mut mem = Memories::new(cfg)?;
    let features = embed(frame, &weights.embed)?;
    mem.spatial.insert(0, ReferenceFrame { features: features.clone(), frame: frame.clone() })?;
    let state = StmlState {
        test: features,
        references: references_for(&mem, cfg)?,
        objects: ObjectFeatures::zeros(n, weights.config.channels),
    };
    let key = stml_forward(&state, &weights.blocks, cfg.block())?.test.tokens;
    let values = encode_id_values(frame, gt, n, &weights.encoder)?;
    mem.temporal.insert(0, KeyValue::new(key, values)?)?;
    mem.targets = n;
    mem.last_frame = Some(0);
    mem.audit()?;
    Ok(mem)
}

/// Segments frame `frame_idx` and updates both banks.
pub fn segment_frame(
    frame: &Frame,
    frame_idx: usize,
    mem: &mut Memories,
    weights: &ModelWeights,
    cfg: &PipelineConfig,
) -> Result<FrameOutput> {
    let last = mem
        .last_frame
        .ok_or_else(|| StmaError::contract("memories are not initialized; call initialize_memories first"))?;
    if frame_idx <= last {
        return Err(StmaError::contract(format!("frame {frame_idx} does not follow frame {last}")));
    }
    let n = mem.targets;
    let features = embed(frame, &weights.embed)?;
    let objects = object_features_from_memory(&mem.temporal, n, &weights.object_projection)?;
    let state = StmlState { test: features.clone(), references: references_for(mem, cfg)?, objects };
    let key = stml_forward(&state, &weights.blocks, cfg.block())?.test;
    let (aff, usage) = affinity(&key, &mem.temporal, cfg.similarity)?;
    let read = readout(&aff, &mem.temporal)?;
    mem.temporal.touch(&usage)?;
    let skips = conv_stem(frame, &weights.stem)?;
    let logits = decode(&read, &skips, &weights.decoder)?;
    let out = aggregate(&logits)?;

    mem.spatial.insert(frame_idx, ReferenceFrame { features, frame: frame.clone() })?;
    if frame_idx.is_multiple_of(cfg.temporal_stride) {
        let values = encode_id_values(frame, &out.masks, n, &weights.encoder)?;
        mem.temporal.insert(frame_idx, KeyValue::new(key.tokens, values)?)?;
    }
    mem.last_frame = Some(frame_idx);
    mem.audit()?;
    Ok(FrameOutput { masks: out.masks, probs: out.probs, usage })
}

/// Runs a whole sequence; entry 0 of the result is the given first mask.
pub fn segment_sequence(
    frames: &[Frame],
    first_mask: &TargetMasks,
    weights: &ModelWeights,
    cfg: &PipelineConfig,
    mut on_frame: impl FnMut(usize, &Memories) -> Result<()>,
) -> Result<Vec<TargetMasks>> {
    let (first, rest) = frames.split_first().ok_or_else(|| StmaError::contract("sequence has no frames"))?;
    let mut mem = initialize_memories(first, first_mask, weights, cfg)?;
    on_frame(0, &mem)?;
    let mut masks = vec![first_mask.clone()];
    for (i, frame) in rest.iter().enumerate() {
        masks.push(segment_frame(frame, i + 1, &mut mem, weights, cfg)?.masks);
        on_frame(i + 1, &mem)?;
    }
    Ok(masks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> ModelWeights {
        let cfg = ModelConfig {
            height: 32,
            width: 32,
            channels: 16,
            heads: 2,
            blocks: 1,
            value_channels: 8,
            ..ModelConfig::default()
        };
        ModelWeights::random(cfg, 11).unwrap()
    }

    fn frame(v: f64) -> Frame {
        Frame::from_fn(32, 32, |c, y, x| ((c + y * 3 + x * 7) as f64 * v).sin().abs()).unwrap()
    }

    fn square_mask() -> TargetMasks {
        let ids = (0..32 * 32).map(|i| u8::from((4..20).contains(&(i / 32)) && (8..24).contains(&(i % 32)))).collect();
        TargetMasks::new(32, 32, 1, ids).unwrap()
    }

    #[test]
    fn uninitialized_memories_are_rejected() {
        let cfg = PipelineConfig::default();
        let mut mem = Memories::new(&cfg).unwrap();
        assert!(segment_frame(&frame(0.1), 1, &mut mem, &tiny(), &cfg).is_err());
    }

    #[test]
    fn frames_must_advance() {
        let (w, cfg) = (tiny(), PipelineConfig::default());
        let mut mem = initialize_memories(&frame(0.1), &square_mask(), &w, &cfg).unwrap();
        segment_frame(&frame(0.2), 1, &mut mem, &w, &cfg).unwrap();
        assert!(segment_frame(&frame(0.3), 1, &mut mem, &w, &cfg).is_err());
    }

    #[test]
    fn usage_matches_affinity_mass() {
        let (w, cfg) = (tiny(), PipelineConfig::default());
        let mut mem = initialize_memories(&frame(0.1), &square_mask(), &w, &cfg).unwrap();
        let mut expected = [0.0];
        for f in 1..4 {
            let before = mem.temporal.usages();
            let out = segment_frame(&frame(0.1 + f as f64 * 0.05), f, &mut mem, &w, &cfg).unwrap();
            assert!((out.usage.total() - 4.0).abs() < 1e-9);
            // Pinned entry only ever gains affinity mass.
            expected[0] += out.usage.increments()[0];
            assert!((mem.temporal.usages()[0] - expected[0]).abs() < 1e-12);
            assert!(mem.temporal.usages()[0] >= before[0]);
        }
    }

    #[test]
    fn every_mode_runs() {
        let w = tiny();
        for mode in [AttentionMode::Full, AttentionMode::NoObject, AttentionMode::NoSpatial, AttentionMode::Joint] {
            let cfg = PipelineConfig { mode, ..PipelineConfig::default() };
            let frames: Vec<Frame> = (0..5).map(|f| frame(0.1 + f as f64 * 0.01)).collect();
            let masks = segment_sequence(&frames, &square_mask(), &w, &cfg, |_, m| m.audit()).unwrap();
            assert_eq!(masks.len(), 5);
            assert!(masks.iter().all(|m| m.ids().iter().all(|&v| v <= 1)));
        }
    }
}
