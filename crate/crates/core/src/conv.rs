//! Spatial feature grids and the convolution / resampling kernels shared by
//! the stem, the ID-value encoder, and the decoder.
//!
//! A grid stores `height·width` positions as rows of a `[(H·W)×C]` tensor
//! (row-major over positions, channels last), the same layout as tokens.

use rand::Rng;

use crate::error::{Result, StmaError};
use crate::init::fan_in_uniform;
use crate::tensor::{ops, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub tokens: Tensor,
    pub height: usize,
    pub width: usize,
}

impl FeatureGrid {
    pub fn new(tokens: Tensor, height: usize, width: usize) -> Result<Self> {
        let (rows, _) = tokens.dims2()?;
        if rows != height * width {
            return Err(StmaError::dim("feature grid", tokens.shape(), &[height, width]));
        }
        Ok(Self { tokens, height, width })
    }

    pub fn channels(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { tokens: ops::map(&self.tokens, f), height: self.height, width: self.width }
    }

    pub fn relu(&self) -> Self {
        self.map(|v| v.max(0.0))
    }

    pub fn add(&self, other: &FeatureGrid) -> Result<Self> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(StmaError::dim("grid add", &[self.height, self.width], &[other.height, other.width]));
        }
        Self::new(ops::add(&self.tokens, &other.tokens)?, self.height, self.width)
    }

    /// Channel-first `[C×H×W]` view of the grid.
    pub fn to_planes(&self) -> Tensor {
        let c = self.channels();
        let hw = self.height * self.width;
        let d = self.tokens.data();
        Tensor::from_fn(&[c, self.height, self.width], |i| {
            let (ch, pos) = (i / hw, i % hw);
            d[pos * c + ch]
        })
    }

    pub fn from_planes(planes: &Tensor) -> Result<Self> {
        let [c, h, w] = planes.shape()[..] else {
            return Err(StmaError::contract(format!("expected [C, H, W] planes, got {:?}", planes.shape())));
        };
        let d = planes.data();
        let tokens = Tensor::from_fn(&[h * w, c], |i| {
            let (pos, ch) = (i / c, i % c);
            d[ch * h * w + pos]
        });
        Self::new(tokens, h, w)
    }

    /// Stacks grids of equal geometry along the channel axis.
    pub fn concat_channels(parts: &[&FeatureGrid]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| StmaError::contract("concat of zero grids"))?;
        let tokens: Vec<&Tensor> = parts.iter().map(|g| &g.tokens).collect();
        Self::new(ops::concat_cols(&tokens)?, first.height, first.width)
    }
}

/// 2D convolution with square kernel, zero padding, and bias.
///
/// `weight` is `[(k·k·C_in) × C_out]`, rows ordered `(ky, kx, c_in)` so the
/// convolution is one matrix product of the unfolded input with `weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn random(rng: &mut impl Rng, c_in: usize, c_out: usize, kernel: usize, stride: usize) -> Self {
        let fan_in = kernel * kernel * c_in;
        Self {
            weight: fan_in_uniform(rng, &[fan_in, c_out], fan_in),
            bias: fan_in_uniform(rng, &[c_out], fan_in),
            kernel,
            stride,
            padding: kernel / 2,
        }
    }

    pub fn zeros(c_in: usize, c_out: usize, kernel: usize, stride: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[kernel * kernel * c_in, c_out]),
            bias: Tensor::zeros(&[c_out]),
            kernel,
            stride,
            padding: kernel / 2,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[0] / (self.kernel * self.kernel)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        let out = |n: usize| (n + 2 * self.padding - self.kernel) / self.stride + 1;
        (out(height), out(width))
    }

    pub fn forward(&self, input: &FeatureGrid) -> Result<FeatureGrid> {
        let c_in = self.in_channels();
        if input.channels() != c_in {
            return Err(StmaError::dim("conv2d", input.tokens.shape(), self.weight.shape()));
        }
        let (oh, ow) = self.output_size(input.height, input.width);
        let k = self.kernel;
        let cols = k * k * c_in;
        let src = input.tokens.data();
        let mut unfolded = vec![0.0; oh * ow * cols];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &mut unfolded[(oy * ow + ox) * cols..(oy * ow + ox + 1) * cols];
                for ky in 0..k {
                    let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                    if iy < 0 || iy >= input.height as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                        if ix < 0 || ix >= input.width as isize {
                            continue;
                        }
                        let pos = iy as usize * input.width + ix as usize;
                        let dst = (ky * k + kx) * c_in;
                        row[dst..dst + c_in].copy_from_slice(&src[pos * c_in..(pos + 1) * c_in]);
                    }
                }
            }
        }
        let unfolded = Tensor::new(vec![oh * ow, cols], unfolded)?;
        let out = ops::add_row_bias(&ops::matmul(&unfolded, &self.weight)?, &self.bias)?;
        FeatureGrid::new(out, oh, ow)
    }
}

/// Per-position linear map `C_in → C_out` (a 1×1 convolution).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn random(rng: &mut impl Rng, c_in: usize, c_out: usize) -> Self {
        Self { weight: fan_in_uniform(rng, &[c_in, c_out], c_in), bias: fan_in_uniform(rng, &[c_out], c_in) }
    }

    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self { weight: Tensor::zeros(&[c_in, c_out]), bias: Tensor::zeros(&[c_out]) }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        ops::add_row_bias(&ops::matmul(x, &self.weight)?, &self.bias)
    }

    pub fn apply_grid(&self, g: &FeatureGrid) -> Result<FeatureGrid> {
        FeatureGrid::new(self.apply(&g.tokens)?, g.height, g.width)
    }
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest(g: &FeatureGrid, factor: usize) -> Result<FeatureGrid> {
    let c = g.channels();
    let (h, w) = (g.height * factor, g.width * factor);
    let src = g.tokens.data();
    let tokens = Tensor::from_fn(&[h * w, c], |i| {
        let (pos, ch) = (i / c, i % c);
        let (y, x) = (pos / w, pos % w);
        src[((y / factor) * g.width + x / factor) * c + ch]
    });
    FeatureGrid::new(tokens, h, w)
}

/// Bilinear upsampling of every channel by an integer factor, with
/// half-pixel centres and edge clamping (`align_corners = false`).
pub fn upsample_bilinear(g: &FeatureGrid, factor: usize) -> Result<FeatureGrid> {
    let c = g.channels();
    let (h, w) = (g.height * factor, g.width * factor);
    let src = g.tokens.data();
    let axis = |out: usize, size: usize| -> (usize, usize, f64) {
        let coord = ((out as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
        let lo = (coord.floor() as usize).min(size - 1);
        let hi = (lo + 1).min(size - 1);
        (lo, hi, coord - lo as f64)
    };
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        let (y0, y1, ty) = axis(y, g.height);
        for x in 0..w {
            let (x0, x1, tx) = axis(x, g.width);
            for ch in 0..c {
                let at = |yy: usize, xx: usize| src[(yy * g.width + xx) * c + ch];
                let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
                let bottom = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
                out[(y * w + x) * c + ch] = top * (1.0 - ty) + bottom * ty;
            }
        }
    }
    FeatureGrid::new(Tensor::new(vec![h * w, c], out)?, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::seeded_rng;
    use crate::oracle::direct_conv2d;

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = seeded_rng(3);
        let conv = Conv2d::random(&mut rng, 3, 5, 3, 2);
        let input = FeatureGrid::new(crate::init::uniform(&mut rng, &[7 * 6, 3], 0.0, 1.0), 7, 6).unwrap();
        let got = conv.forward(&input).unwrap();
        let expected = direct_conv2d(&input, &conv);
        assert_eq!((got.height, got.width), (expected.height, expected.width));
        assert!(got.tokens.max_abs_diff(&expected.tokens).unwrap() < 1e-12);
    }

    #[test]
    fn planes_round_trip() {
        let mut rng = seeded_rng(4);
        let g = FeatureGrid::new(crate::init::uniform(&mut rng, &[12, 2], 0.0, 1.0), 3, 4).unwrap();
        assert_eq!(FeatureGrid::from_planes(&g.to_planes()).unwrap(), g);
    }

    #[test]
    fn bilinear_keeps_constants_and_interpolates_ramps() {
        let g = FeatureGrid::new(Tensor::full(&[4, 1], 2.5), 2, 2).unwrap();
        let up = upsample_bilinear(&g, 4).unwrap();
        assert!(up.tokens.data().iter().all(|&v| v == 2.5));

        let ramp = FeatureGrid::new(Tensor::new(vec![2, 1], vec![0.0, 4.0]).unwrap(), 1, 2).unwrap();
        let up = upsample_bilinear(&ramp, 2).unwrap();
        assert_eq!((up.height, up.width), (2, 4));
        assert_eq!(up.tokens.data(), &[0.0, 1.0, 3.0, 4.0, 0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn nearest_replicates_blocks() {
        let g = FeatureGrid::new(Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap(), 1, 2).unwrap();
        let up = upsample_nearest(&g, 2).unwrap();
        assert_eq!(up.tokens.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }
}
