use rand::Rng;
use rayon::prelude::*;

use crate::conv::{upsample_bilinear, upsample_nearest, Conv2d, FeatureGrid, Linear};
use crate::embedding::SkipFeatures;
use crate::error::{Result, StmaError};
use crate::tensor::Tensor;

use super::ReadoutFeatures;

pub const DECODER_WIDTH: usize = 32;

/// `x + conv_b(relu(conv_a(relu(x))))`, both 3×3 stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub conv_a: Conv2d,
    pub conv_b: Conv2d,
}

impl ResidualBlock {
    pub fn random(rng: &mut impl Rng, width: usize) -> Self {
        Self { conv_a: Conv2d::random(rng, width, width, 3, 1), conv_b: Conv2d::random(rng, width, width, 3, 1) }
    }

    pub fn zeros(width: usize) -> Self {
        Self { conv_a: Conv2d::zeros(width, width, 3, 1), conv_b: Conv2d::zeros(width, width, 3, 1) }
    }

    pub fn forward(&self, x: &FeatureGrid) -> Result<FeatureGrid> {
        let inner = self.conv_b.forward(&self.conv_a.forward(&x.relu())?.relu())?;
        x.add(&inner)
    }
}

/// Residual upsampling decoder from the 1/16 readout grid to 1/4, then a
/// single-channel head and a 4× bilinear upsample.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights {
    pub input: Linear,
    pub stage16: ResidualBlock,
    pub skip8: Linear,
    pub stage8: ResidualBlock,
    pub skip4: Linear,
    pub head: Conv2d,
}

impl DecoderWeights {
    pub fn random(rng: &mut impl Rng, value_channels: usize, eighth_channels: usize, quarter_channels: usize) -> Self {
        let d = DECODER_WIDTH;
        Self {
            input: Linear::random(rng, value_channels, d),
            stage16: ResidualBlock::random(rng, d),
            skip8: Linear::random(rng, eighth_channels, d),
            stage8: ResidualBlock::random(rng, d),
            skip4: Linear::random(rng, quarter_channels, d),
            head: Conv2d::random(rng, d, 1, 3, 1),
        }
    }

    pub fn zeros(value_channels: usize, eighth_channels: usize, quarter_channels: usize) -> Self {
        let d = DECODER_WIDTH;
        Self {
            input: Linear::zeros(value_channels, d),
            stage16: ResidualBlock::zeros(d),
            skip8: Linear::zeros(eighth_channels, d),
            stage8: ResidualBlock::zeros(d),
            skip4: Linear::zeros(quarter_channels, d),
            head: Conv2d::zeros(d, 1, 3, 1),
        }
    }

    fn decode_one(&self, readout: FeatureGrid, skips: &SkipFeatures) -> Result<Tensor> {
        let x = self.stage16.forward(&self.input.apply_grid(&readout)?)?;
        let x = upsample_nearest(&x, 2)?.add(&self.skip8.apply_grid(&skips.eighth)?)?;
        let x = self.stage8.forward(&x)?;
        let x = upsample_nearest(&x, 2)?.add(&self.skip4.apply_grid(&skips.quarter)?)?;
        let logits = upsample_bilinear(&self.head.forward(&x)?, 4)?;
        Ok(logits.tokens)
    }
}

/// Logits `[n×H×W]`; every target runs through the same weights.
pub fn decode(readout: &ReadoutFeatures, skips: &SkipFeatures, w: &DecoderWeights) -> Result<Tensor> {
    let (gh, gw) = (skips.eighth.height / 2, skips.eighth.width / 2);
    if skips.eighth.height != 2 * gh
        || skips.eighth.width != 2 * gw
        || (skips.quarter.height, skips.quarter.width) != (4 * gh, 4 * gw)
    {
        return Err(StmaError::dim(
            "decode skips",
            &[skips.quarter.height, skips.quarter.width],
            &[skips.eighth.height, skips.eighth.width],
        ));
    }
    let tokens = readout.per_target.shape()[1];
    if tokens != gh * gw {
        return Err(StmaError::dim("decode", readout.per_target.shape(), &[gh, gw]));
    }
    let planes: Vec<Tensor> = (0..readout.targets())
        .into_par_iter()
        .map(|j| {
            let grid = FeatureGrid::new(readout.target(j)?, gh, gw)?;
            w.decode_one(grid, skips)?.reshape(&[16 * gh, 16 * gw])
        })
        .collect::<Result<_>>()?;
    Tensor::stack(&planes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{conv_stem, ConvStem, Frame};
    use crate::init::{seeded_rng, uniform};

    fn skips(h: usize, w: usize, seed: u64) -> SkipFeatures {
        let frame = Frame::new(uniform(&mut seeded_rng(seed), &[3, h, w], 0.0, 1.0)).unwrap();
        conv_stem(&frame, &ConvStem::random(&mut seeded_rng(seed + 1))).unwrap()
    }

    #[test]
    fn identical_readouts_give_identical_planes() {
        let s = skips(64, 64, 1);
        let row = uniform(&mut seeded_rng(3), &[16, 8], -1.0, 1.0);
        let r = ReadoutFeatures { per_target: Tensor::stack(&[row.clone(), row]).unwrap() };
        let w = DecoderWeights::random(&mut seeded_rng(4), 8, 32, 32);
        let out = decode(&r, &s, &w).unwrap();
        assert_eq!(out.shape(), &[2, 64, 64]);
        assert_eq!(out.outer(0).unwrap(), out.outer(1).unwrap());
    }

    #[test]
    fn only_head_bias_gives_constant_plane() {
        let s = skips(32, 48, 5);
        let r = ReadoutFeatures { per_target: uniform(&mut seeded_rng(6), &[1, 6, 8], -1.0, 1.0) };
        let mut w = DecoderWeights::zeros(8, 32, 32);
        w.head.bias = Tensor::full(&[1], -0.75);
        let out = decode(&r, &s, &w).unwrap();
        assert_eq!(out.shape(), &[1, 32, 48]);
        assert!(out.data().iter().all(|&v| v == -0.75));
    }

    #[test]
    fn geometry_mismatch_is_rejected() {
        let s = skips(64, 64, 7);
        let r = ReadoutFeatures { per_target: Tensor::zeros(&[1, 9, 8]) };
        let w = DecoderWeights::zeros(8, 32, 32);
        assert!(matches!(decode(&r, &s, &w), Err(StmaError::Dimension { .. })));
    }
}
