//! Wall-clock throughput of the attention stack and the per-frame loop.

use std::time::Instant;

use serde::Serialize;

use crate::embedding::embed;
use crate::error::Result;
use crate::model::{ModelConfig, ModelWeights};
use crate::pipeline::{initialize_memories, segment_frame, PipelineConfig};
use crate::stml::{stml_forward, ObjectFeatures, StmlState};

use super::synth::generate_sequence;

#[derive(Debug, Clone, Serialize)]
pub struct BenchResult {
    pub name: String,
    pub iterations: usize,
    pub seconds: f64,
    /// Test tokens processed per second.
    pub tokens_per_second: f64,
}

impl BenchResult {
    fn new(name: &str, iterations: usize, tokens: usize, seconds: f64) -> Self {
        Self {
            name: name.to_string(),
            iterations,
            seconds,
            tokens_per_second: (iterations * tokens) as f64 / seconds.max(f64::MIN_POSITIVE),
        }
    }
}

/// Times `iterations` STML forwards and `iterations` segmented frames on a
/// synthetic two-target sequence.
pub fn run_bench(
    model: ModelConfig,
    pipeline: &PipelineConfig,
    iterations: usize,
    seed: u64,
) -> Result<Vec<BenchResult>> {
    let iterations = iterations.max(1);
    let weights = ModelWeights::random(model, seed)?;
    let seq = generate_sequence(seed, iterations + 1, 2, model.height, model.width)?;
    let tokens = model.tokens();

    let mut mem = initialize_memories(&seq.frames[0], &seq.masks[0], &weights, pipeline)?;
    let state = StmlState {
        test: embed(&seq.frames[1], &weights.embed)?,
        references: mem.spatial.reference_maps()?,
        objects: ObjectFeatures::zeros(2, model.channels),
    };
    let start = Instant::now();
    for _ in 0..iterations {
        stml_forward(&state, &weights.blocks, pipeline.mode)?;
    }
    let stml = BenchResult::new("stml_forward", iterations, tokens, start.elapsed().as_secs_f64());

    let start = Instant::now();
    for (i, frame) in seq.frames.iter().enumerate().skip(1) {
        segment_frame(frame, i, &mut mem, &weights, pipeline)?;
    }
    let frames = BenchResult::new("segment_frame", iterations, tokens, start.elapsed().as_secs_f64());
    Ok(vec![stml, frames])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reports_positive_throughput() {
        let model = ModelConfig {
            height: 32,
            width: 32,
            channels: 16,
            heads: 2,
            blocks: 1,
            value_channels: 8,
            ..ModelConfig::default()
        };
        let r = run_bench(model, &PipelineConfig::default(), 2, 1).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|b| b.tokens_per_second > 0.0 && b.iterations == 2));
    }
}
