//! Region similarity J, contour accuracy F and their aggregate.

use serde::Serialize;

use crate::error::{Result, StmaError};
use crate::masks::TargetMasks;

/// Fraction of the image diagonal used as the default boundary tolerance.
pub const BOUNDARY_TOLERANCE_FRACTION: f64 = 0.008;

fn check_pair(pred: &TargetMasks, gt: &TargetMasks, target: usize) -> Result<()> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(StmaError::dim("metric", &[pred.height(), pred.width()], &[gt.height(), gt.width()]));
    }
    if target == 0 || target > pred.targets().max(gt.targets()) {
        return Err(StmaError::contract(format!("target {target} is not a known target ID")));
    }
    Ok(())
}

/// Intersection over union of target `target`; 1 when both masks are empty.
pub fn region_similarity(pred: &TargetMasks, gt: &TargetMasks, target: usize) -> Result<f64> {
    check_pair(pred, gt, target)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.ids().iter().zip(gt.ids()) {
        let (p, g) = (p as usize == target, g as usize == target);
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// `max(1, ceil(0.008 · diagonal))` pixels.
pub fn default_tolerance(height: usize, width: usize) -> usize {
    let diag = ((height * height + width * width) as f64).sqrt();
    ((BOUNDARY_TOLERANCE_FRACTION * diag).ceil() as usize).max(1)
}

/// Foreground pixels with at least one background 4-neighbour; pixels
/// outside the image count as background.
pub fn boundary(mask: &[bool], height: usize, width: usize) -> Vec<bool> {
    let at = |y: isize, x: isize| {
        y >= 0 && x >= 0 && (y as usize) < height && (x as usize) < width && mask[y as usize * width + x as usize]
    };
    (0..height * width)
        .map(|i| {
            let (y, x) = ((i / width) as isize, (i % width) as isize);
            mask[i] && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dy, dx)| !at(y + dy, x + dx))
        })
        .collect()
}

/// Marks every pixel within Euclidean distance `radius` of a set pixel.
fn dilate(points: &[bool], height: usize, width: usize, radius: usize) -> Vec<bool> {
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|(dy, dx)| dy * dy + dx * dx <= r * r)
        .collect();
    let mut out = vec![false; points.len()];
    for (i, _) in points.iter().enumerate().filter(|(_, &p)| p) {
        let (y, x) = ((i / width) as isize, (i % width) as isize);
        for (dy, dx) in &offsets {
            let (yy, xx) = (y + dy, x + dx);
            if yy >= 0 && xx >= 0 && (yy as usize) < height && (xx as usize) < width {
                out[yy as usize * width + xx as usize] = true;
            }
        }
    }
    out
}

/// Boundary precision and recall of target `target` at `tolerance` pixels.
pub fn boundary_precision_recall(
    pred: &TargetMasks,
    gt: &TargetMasks,
    target: usize,
    tolerance: usize,
) -> Result<(f64, f64)> {
    check_pair(pred, gt, target)?;
    let (h, w) = (gt.height(), gt.width());
    let pb = boundary(&pred.binary(target), h, w);
    let gb = boundary(&gt.binary(target), h, w);
    let matched = |src: &[bool], other: &[bool]| -> (usize, usize) {
        let near = dilate(other, h, w, tolerance);
        let total = src.iter().filter(|&&b| b).count();
        let hit = src.iter().zip(&near).filter(|(&s, &n)| s && n).count();
        (hit, total)
    };
    let ratio = |(hit, total): (usize, usize)| if total == 0 { 1.0 } else { hit as f64 / total as f64 };
    Ok((ratio(matched(&pb, &gb)), ratio(matched(&gb, &pb))))
}

/// Boundary F-measure; 1 when both boundaries are empty, 0 when exactly one is.
pub fn contour_accuracy(pred: &TargetMasks, gt: &TargetMasks, target: usize, tolerance: usize) -> Result<f64> {
    check_pair(pred, gt, target)?;
    let (h, w) = (gt.height(), gt.width());
    let p_empty = !boundary(&pred.binary(target), h, w).contains(&true);
    let g_empty = !boundary(&gt.binary(target), h, w).contains(&true);
    match (p_empty, g_empty) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let (p, r) = boundary_precision_recall(pred, gt, target, tolerance)?;
    Ok(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TargetScore {
    pub frame: usize,
    pub target: usize,
    pub j: f64,
    pub f: f64,
}

/// Per-frame, per-target scores with their means.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalRecord {
    pub scores: Vec<TargetScore>,
}

impl EvalRecord {
    /// Scores every target of `gt` in each frame pair.
    pub fn evaluate(frames: &[(usize, &TargetMasks, &TargetMasks)]) -> Result<Self> {
        let mut scores = Vec::new();
        for &(frame, pred, gt) in frames {
            let tol = default_tolerance(gt.height(), gt.width());
            for target in 1..=gt.targets() {
                scores.push(TargetScore {
                    frame,
                    target,
                    j: region_similarity(pred, gt, target)?,
                    f: contour_accuracy(pred, gt, target, tol)?,
                });
            }
        }
        Ok(Self { scores })
    }

    pub fn mean_j(&self) -> f64 {
        mean(self.scores.iter().map(|s| s.j))
    }

    pub fn mean_f(&self) -> f64 {
        mean(self.scores.iter().map(|s| s.f))
    }

    pub fn j_and_f(&self) -> f64 {
        (self.mean_j() + self.mean_f()) / 2.0
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}
