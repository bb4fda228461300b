//! Sequence inference and directory evaluation behind the CLI.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Result, StmaError};
use crate::masks::TargetMasks;
use crate::model::ModelWeights;
use crate::pipeline::segment_sequence;

use super::config::RunConfig;
use super::io::{read_frame, read_manifest, read_mask, write_mask};
use super::metrics::{contour_accuracy, default_tolerance, region_similarity, EvalRecord};

pub const METRICS_LOG: &str = "metrics.jsonl";

pub fn mask_file_name(index: usize) -> String {
    format!("{index:05}.png")
}

#[derive(Debug, Serialize)]
struct FrameLog {
    frame: usize,
    pixels_per_id: Vec<usize>,
    spatial_frames: Vec<usize>,
    temporal_frames: Vec<usize>,
    temporal_usage: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    j: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    f: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub frames: usize,
    pub targets: usize,
    pub masks: Vec<PathBuf>,
    /// Scores over frames after the first that carry a ground-truth mask.
    pub eval: EvalRecord,
}

/// Builds weights for frames of `height × width` (already multiples of 16).
pub fn weights_for(cfg: &RunConfig, height: usize, width: usize) -> Result<ModelWeights> {
    match &cfg.weights {
        Some(dir) => {
            let w = ModelWeights::load(dir)?;
            if (w.config.height, w.config.width) != (height, width) {
                return Err(StmaError::dim(
                    "saved model geometry",
                    &[w.config.height, w.config.width],
                    &[height, width],
                ));
            }
            Ok(w)
        }
        None => {
            let mut model = cfg.model;
            model.height = height;
            model.width = width;
            ModelWeights::random(model, cfg.seed)
        }
    }
}

/// Segments the manifest's sequence and writes one mask per frame plus a
/// JSON-lines log to `out`.
pub fn run_manifest(cfg: &RunConfig, manifest: &Path, out: &Path) -> Result<RunSummary> {
    let entries = read_manifest(manifest)?;
    let frames = entries.iter().map(|e| read_frame(&e.frame)).collect::<Result<Vec<_>>>()?;
    let gts = entries.iter().map(|e| e.mask.as_deref().map(read_mask).transpose()).collect::<Result<Vec<_>>>()?;
    let (h, w) = (frames[0].height(), frames[0].width());
    if let Some(bad) = frames.iter().position(|f| (f.height(), f.width()) != (h, w)) {
        return Err(StmaError::contract(format!("frame {bad} differs in size from frame 0")));
    }
    let first = gts[0].clone().expect("manifest guarantees a first mask");
    if (first.height(), first.width()) != (h, w) {
        return Err(StmaError::dim("first mask", &[first.height(), first.width()], &[h, w]));
    }
    let n = first.targets();
    let padded: Vec<_> = frames.iter().map(|f| f.pad_to_multiple(16)).collect();
    let weights = weights_for(cfg, padded[0].height(), padded[0].width())?;

    fs::create_dir_all(out)?;
    let mut log = BufWriter::new(File::create(out.join(METRICS_LOG))?);
    let mut paths = Vec::new();
    let mut scored: Vec<(usize, TargetMasks, TargetMasks)> = Vec::new();
    let mut pending: Vec<FrameLog> = Vec::new();
    let masks = segment_sequence(&padded, &first.pad_to_multiple(16), &weights, &cfg.pipeline, |i, mem| {
        pending.push(FrameLog {
            frame: i,
            pixels_per_id: Vec::new(),
            spatial_frames: mem.spatial.frame_indices(),
            temporal_frames: mem.temporal.frame_indices(),
            temporal_usage: mem.temporal.usages(),
            j: None,
            f: None,
        });
        Ok(())
    })?;
    for (i, (mask, mut entry)) in masks.iter().zip(pending).enumerate() {
        let mask = mask.crop(h, w)?.with_targets(n)?;
        let mut counts = vec![0usize; n + 1];
        for &id in mask.ids() {
            counts[id as usize] += 1;
        }
        entry.pixels_per_id = counts;
        if let (true, Some(gt)) = (i > 0, &gts[i]) {
            let gt = gt.clone().with_targets(n.max(gt.targets()))?;
            let tol = default_tolerance(h, w);
            let targets = 1..=gt.targets();
            entry.j = Some(targets.clone().map(|t| region_similarity(&mask, &gt, t)).collect::<Result<_>>()?);
            entry.f = Some(targets.map(|t| contour_accuracy(&mask, &gt, t, tol)).collect::<Result<_>>()?);
            scored.push((i, mask.clone(), gt));
        }
        let path = out.join(mask_file_name(i));
        write_mask(&path, &mask)?;
        paths.push(path);
        serde_json::to_writer(&mut log, &entry).map_err(|e| StmaError::Parse(e.to_string()))?;
        log.write_all(b"\n")?;
    }
    log.flush()?;
    let refs: Vec<(usize, &TargetMasks, &TargetMasks)> = scored.iter().map(|(i, p, g)| (*i, p, g)).collect();
    Ok(RunSummary { frames: frames.len(), targets: n, masks: paths, eval: EvalRecord::evaluate(&refs)? })
}

/// Pairs `pred_dir/<name>` with `gt_dir/<name>` for every PNG in `gt_dir`.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<EvalRecord> {
    let mut names: Vec<PathBuf> = fs::read_dir(gt_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(StmaError::contract(format!("no PNG masks in {}", gt_dir.display())));
    }
    let mut pairs = Vec::new();
    for (i, gt_path) in names.iter().enumerate() {
        let name = gt_path.file_name().expect("file path");
        let gt = read_mask(gt_path)?;
        let pred = read_mask(&pred_dir.join(name))?;
        let n = gt.targets().max(pred.targets());
        pairs.push((i, pred.with_targets(n)?, gt.with_targets(n)?));
    }
    let refs: Vec<(usize, &TargetMasks, &TargetMasks)> = pairs.iter().map(|(i, p, g)| (*i, p, g)).collect();
    EvalRecord::evaluate(&refs)
}

/// Tab-separated per-target table followed by the means.
pub fn eval_table(record: &EvalRecord) -> String {
    let mut s = String::from("frame\ttarget\tJ\tF\n");
    for r in &record.scores {
        s.push_str(&format!("{}\t{}\t{:.6}\t{:.6}\n", r.frame, r.target, r.j, r.f));
    }
    s.push_str(&format!(
        "mean\t-\t{:.6}\t{:.6}\nJ&F\t-\t{:.6}\t-\n",
        record.mean_j(),
        record.mean_f(),
        record.j_and_f()
    ));
    s
}
