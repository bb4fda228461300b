//! Frames to tokens: patchify, linear projection plus sinusoidal positions,
//! and the strided convolutional stem that yields the 1/4 and 1/8 skips.

use rand::Rng;

use crate::conv::{Conv2d, FeatureGrid};
use crate::error::{Result, StmaError};
use crate::init::fan_in_uniform;
use crate::tensor::{ops, Tensor};

/// An RGB frame stored channel-first as `[3×H×W]`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pixels: Tensor,
}

impl Frame {
    pub fn new(pixels: Tensor) -> Result<Self> {
        match pixels.shape() {
            [3, _, _] => {}
            other => return Err(StmaError::contract(format!("frame must be [3, H, W], got {other:?}"))),
        }
        if pixels.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(StmaError::contract("frame pixels must lie in [0, 1]"));
        }
        Ok(Self { pixels })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f64) -> Result<Self> {
        let hw = height * width;
        Self::new(Tensor::from_fn(&[3, height, width], |i| {
            let (c, pos) = (i / hw, i % hw);
            f(c, pos / width, pos % width)
        }))
    }

    /// Builds a frame from interleaved 8-bit RGB, scaled by 1/255.
    pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != height * width * 3 {
            return Err(StmaError::dim("frame from rgb8", &[rgb.len()], &[height, width, 3]));
        }
        Self::from_fn(height, width, |c, y, x| rgb[(y * width + x) * 3 + c] as f64 / 255.0)
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn at(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.pixels.data()[(channel * self.height() + y) * self.width() + x]
    }

    /// Zero-pads bottom/right so both sides are multiples of `multiple`.
    pub fn pad_to_multiple(&self, multiple: usize) -> Self {
        let (h, w) = (self.height(), self.width());
        let (ph, pw) = (h.div_ceil(multiple) * multiple, w.div_ceil(multiple) * multiple);
        if (ph, pw) == (h, w) {
            return self.clone();
        }
        Self::from_fn(ph, pw, |c, y, x| if y < h && x < w { self.at(c, y, x) } else { 0.0 })
            .expect("padding preserves range")
    }

    /// Position-major `[(H·W)×3]` grid of the pixels.
    pub fn to_grid(&self) -> FeatureGrid {
        FeatureGrid::from_planes(&self.pixels).expect("frame is [3, H, W]")
    }
}

fn check_divisible(frame: &Frame, p: usize) -> Result<()> {
    if p == 0 || !frame.height().is_multiple_of(p) || !frame.width().is_multiple_of(p) {
        return Err(StmaError::contract(format!("frame {}x{} is not divisible by {p}", frame.height(), frame.width())));
    }
    Ok(())
}

/// Cuts the frame into `N = HW/P²` patches; row `i` is the patch at grid
/// position `(i / grid_w, i % grid_w)` flattened in `(y, x, channel)` order.
pub fn patchify(frame: &Frame, p: usize) -> Result<Tensor> {
    check_divisible(frame, p)?;
    let (gh, gw) = (frame.height() / p, frame.width() / p);
    let d = 3 * p * p;
    Ok(Tensor::from_fn(&[gh * gw, d], |i| {
        let (patch, k) = (i / d, i % d);
        let (py, px) = (patch / gw, patch % gw);
        let (dy, rest) = (k / (3 * p), k % (3 * p));
        let (dx, c) = (rest / 3, rest % 3);
        frame.at(c, py * p + dy, px * p + dx)
    }))
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Tensor, p: usize, height: usize, width: usize) -> Result<Frame> {
    let (n, d) = patches.dims2()?;
    if !height.is_multiple_of(p) || !width.is_multiple_of(p) || n != (height / p) * (width / p) || d != 3 * p * p {
        return Err(StmaError::dim("unpatchify", patches.shape(), &[height, width, p]));
    }
    let gw = width / p;
    Frame::from_fn(height, width, |c, y, x| {
        let patch = (y / p) * gw + x / p;
        patches.at2(patch, ((y % p) * p + x % p) * 3 + c)
    })
}

/// Interleaved sinusoidal table: column `2i` is `sin(pos·ω_i)`, column
/// `2i+1` is `cos(pos·ω_i)`, with `ω_i = 10000^(-2i/C)` over flat index `pos`.
pub fn positional_table(n: usize, c: usize) -> Tensor {
    Tensor::from_fn(&[n, c], |i| {
        let (pos, col) = (i / c, i % c);
        let pair = (col / 2) as f64;
        let angle = pos as f64 * 10000f64.powf(-2.0 * pair / c as f64);
        if col % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Patch embedding parameters for one frame geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedConfig {
    pub patch_size: usize,
    pub channel_dim: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// `[3P² × C]`
    pub projection: Tensor,
    /// `[N × C]`
    pub positional: Tensor,
}

impl EmbedConfig {
    pub fn random(
        rng: &mut impl Rng,
        patch_size: usize,
        channel_dim: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if patch_size == 0 || !height.is_multiple_of(patch_size) || !width.is_multiple_of(patch_size) {
            return Err(StmaError::contract(format!(
                "frame {height}x{width} is not divisible by patch size {patch_size}"
            )));
        }
        let (grid_h, grid_w) = (height / patch_size, width / patch_size);
        let fan_in = 3 * patch_size * patch_size;
        Ok(Self {
            patch_size,
            channel_dim,
            grid_h,
            grid_w,
            projection: fan_in_uniform(rng, &[fan_in, channel_dim], fan_in),
            positional: positional_table(grid_h * grid_w, channel_dim),
        })
    }

    pub fn tokens(&self) -> usize {
        self.grid_h * self.grid_w
    }
}

/// `N×C` token features for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub tokens: Tensor,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl FeatureMap {
    pub fn new(tokens: Tensor, grid_h: usize, grid_w: usize) -> Result<Self> {
        let (n, _) = tokens.dims2()?;
        if n != grid_h * grid_w {
            return Err(StmaError::dim("feature map", tokens.shape(), &[grid_h, grid_w]));
        }
        Ok(Self { tokens, grid_h, grid_w })
    }

    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.tokens.shape()[1]
    }
}

/// `patchify(frame) · E + positional`.
pub fn embed(frame: &Frame, cfg: &EmbedConfig) -> Result<FeatureMap> {
    let p = cfg.patch_size;
    if frame.height() != cfg.grid_h * p || frame.width() != cfg.grid_w * p {
        return Err(StmaError::dim("embed", &[frame.height(), frame.width()], &[cfg.grid_h * p, cfg.grid_w * p]));
    }
    let patches = patchify(frame, p)?;
    let tokens = ops::add(&ops::matmul(&patches, &cfg.projection)?, &cfg.positional)?;
    FeatureMap::new(tokens, cfg.grid_h, cfg.grid_w)
}

/// Multi-scale skip features at 1/4 and 1/8 resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipFeatures {
    pub quarter: FeatureGrid,
    pub eighth: FeatureGrid,
}

/// Three 3×3 stride-2 convolutions: two reach 1/4, the third 1/8, ReLU between.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStem {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub conv3: Conv2d,
}

pub const QUARTER_CHANNELS: usize = 32;
pub const EIGHTH_CHANNELS: usize = 32;

impl ConvStem {
    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            conv1: Conv2d::random(rng, 3, QUARTER_CHANNELS, 3, 2),
            conv2: Conv2d::random(rng, QUARTER_CHANNELS, QUARTER_CHANNELS, 3, 2),
            conv3: Conv2d::random(rng, QUARTER_CHANNELS, EIGHTH_CHANNELS, 3, 2),
        }
    }

    pub fn zeros() -> Self {
        Self {
            conv1: Conv2d::zeros(3, QUARTER_CHANNELS, 3, 2),
            conv2: Conv2d::zeros(QUARTER_CHANNELS, QUARTER_CHANNELS, 3, 2),
            conv3: Conv2d::zeros(QUARTER_CHANNELS, EIGHTH_CHANNELS, 3, 2),
        }
    }

    pub fn forward(&self, frame: &Frame) -> Result<SkipFeatures> {
        conv_stem(frame, self)
    }
}

pub fn conv_stem(frame: &Frame, stem: &ConvStem) -> Result<SkipFeatures> {
    check_divisible(frame, 8)?;
    let half = stem.conv1.forward(&frame.to_grid())?.relu();
    let quarter = stem.conv2.forward(&half)?;
    let eighth = stem.conv3.forward(&quarter.relu())?;
    Ok(SkipFeatures { quarter, eighth })
}
