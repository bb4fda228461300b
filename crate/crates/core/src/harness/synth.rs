//! Deterministic moving-shapes sequences with exact masks.
//!
//! Objects live on a torus: positions wrap around the frame edges, so a
//! shape leaving on the right re-enters on the left. Higher IDs are drawn on
//! top of lower ones.

use rand::Rng;

use crate::embedding::Frame;
use crate::error::{Result, StmaError};
use crate::init::seeded_rng;
use crate::masks::TargetMasks;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Axis-aligned rectangle anchored at its top-left corner.
    Rect { height: usize, width: usize },
    /// Disk anchored at its centre.
    Disk { radius: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectSpec {
    pub shape: Shape,
    /// `(y, x)` anchor at frame 0.
    pub origin: (usize, usize),
    /// `(dy, dx)` pixels per frame.
    pub velocity: (isize, isize),
    pub color: [f64; 3],
}

impl ObjectSpec {
    /// Anchor at frame `k`: `(origin + velocity·k) mod size`.
    pub fn position(&self, k: usize, height: usize, width: usize) -> (usize, usize) {
        let wrap = |o: usize, v: isize, n: usize| (o as i64 + v as i64 * k as i64).rem_euclid(n as i64) as usize;
        (wrap(self.origin.0, self.velocity.0, height), wrap(self.origin.1, self.velocity.1, width))
    }

    pub fn covers(&self, y: usize, x: usize, k: usize, height: usize, width: usize) -> bool {
        let (py, px) = self.position(k, height, width);
        let dy = (y + height - py) % height;
        let dx = (x + width - px) % width;
        match self.shape {
            Shape::Rect { height: rh, width: rw } => dy < rh && dx < rw,
            Shape::Disk { radius } => {
                let ty = dy.min(height - dy);
                let tx = dx.min(width - dx);
                ty * ty + tx * tx <= radius * radius
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub frames: Vec<Frame>,
    pub masks: Vec<TargetMasks>,
    pub objects: Vec<ObjectSpec>,
    pub background: [f64; 3],
    pub seed: u64,
}

/// Renders `length` frames of the given objects; object `i` has ID `i + 1`.
pub fn render_sequence(
    height: usize,
    width: usize,
    length: usize,
    background: [f64; 3],
    objects: &[ObjectSpec],
    seed: u64,
) -> Result<SyntheticSequence> {
    if height == 0 || width == 0 || length == 0 {
        return Err(StmaError::contract("sequence needs positive geometry and length"));
    }
    if objects.is_empty() || objects.len() > u8::MAX as usize {
        return Err(StmaError::contract("between 1 and 255 objects are supported"));
    }
    let n = objects.len();
    let mut frames = Vec::with_capacity(length);
    let mut masks = Vec::with_capacity(length);
    for k in 0..length {
        let ids: Vec<u8> = (0..height * width)
            .map(|i| {
                let (y, x) = (i / width, i % width);
                (0..n).rev().find(|&o| objects[o].covers(y, x, k, height, width)).map_or(0, |o| (o + 1) as u8)
            })
            .collect();
        let frame = Frame::from_fn(height, width, |c, y, x| match ids[y * width + x] {
            0 => background[c],
            id => objects[id as usize - 1].color[c],
        })?;
        frames.push(frame);
        masks.push(TargetMasks::new(height, width, n, ids)?);
    }
    Ok(SyntheticSequence { frames, masks, objects: objects.to_vec(), background, seed })
}

/// Random layout: `targets` rectangles or disks with small integer
/// velocities and distinct saturated colours on a grey background.
pub fn generate_sequence(
    seed: u64,
    length: usize,
    targets: usize,
    height: usize,
    width: usize,
) -> Result<SyntheticSequence> {
    if targets == 0 {
        return Err(StmaError::contract("at least one target is required"));
    }
    let min_side = height.min(width);
    if min_side < 8 {
        return Err(StmaError::contract("frames must be at least 8 pixels on each side"));
    }
    let mut rng = seeded_rng(seed);
    let grey = rng.gen_range(0.2..0.4);
    let objects = (0..targets)
        .map(|i| {
            let hue = (i as f64 + rng.gen_range(0.0..0.5)) / targets as f64;
            let shape = if rng.gen_bool(0.5) {
                Shape::Rect {
                    height: rng.gen_range(min_side / 6..=min_side / 3),
                    width: rng.gen_range(min_side / 6..=min_side / 3),
                }
            } else {
                Shape::Disk { radius: rng.gen_range(min_side / 12..=min_side / 6) }
            };
            ObjectSpec {
                shape,
                origin: (rng.gen_range(0..height), rng.gen_range(0..width)),
                velocity: (rng.gen_range(-2..=2), rng.gen_range(-2..=2)),
                color: hue_to_rgb(hue),
            }
        })
        .collect::<Vec<_>>();
    render_sequence(height, width, length, [grey; 3], &objects, seed)
}

fn hue_to_rgb(h: f64) -> [f64; 3] {
    let channel = |offset: f64| {
        let t = (h + offset).rem_euclid(1.0) * 6.0;
        ((t - 3.0).abs() - 1.0).clamp(0.0, 1.0) * 0.8 + 0.1
    };
    [channel(0.0), channel(2.0 / 3.0), channel(1.0 / 3.0)]
}
