//! Frame and mask images, and sequence manifests.

use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};

use crate::embedding::Frame;
use crate::error::{Result, StmaError};
use crate::masks::TargetMasks;

pub fn read_frame(path: &Path) -> Result<Frame> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Frame::from_rgb8(h as usize, w as usize, img.as_raw())
}

pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    let (h, w) = (frame.height(), frame.width());
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c| (frame.at(c, y as usize, x as usize) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    });
    img.save(path)?;
    Ok(())
}

/// 8-bit single-channel mask; the target count is the largest ID present.
pub fn read_mask(path: &Path) -> Result<TargetMasks> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    TargetMasks::from_ids(h as usize, w as usize, img.into_raw())
}

pub fn write_mask(path: &Path, masks: &TargetMasks) -> Result<()> {
    let img = GrayImage::from_raw(masks.width() as u32, masks.height() as u32, masks.ids().to_vec())
        .ok_or_else(|| StmaError::contract("mask buffer does not match its geometry"))?;
    img.save(path)?;
    Ok(())
}

/// One manifest line: a frame and its optional ground-truth mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub frame: PathBuf,
    pub mask: Option<PathBuf>,
}

/// Parses `frame [mask]` lines; relative paths resolve against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() > 2 {
            return Err(StmaError::Parse(format!("manifest line {}: expected 'frame [mask]'", lineno + 1)));
        }
        entries.push(ManifestEntry { frame: base.join(fields[0]), mask: fields.get(1).map(|m| base.join(m)) });
    }
    match entries.first() {
        None => Err(StmaError::Parse("manifest lists no frames".into())),
        Some(first) if first.mask.is_none() => {
            Err(StmaError::Parse("the first manifest frame needs a ground-truth mask".into()))
        }
        Some(_) => Ok(entries),
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = TargetMasks::new(3, 4, 2, vec![0, 1, 2, 0, 1, 1, 2, 2, 0, 0, 0, 1]).unwrap();
        let p = dir.path().join("m.png");
        write_mask(&p, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap(), m);
    }

    #[test]
    fn frame_round_trip_at_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let f = Frame::from_fn(5, 6, |c, y, x| ((c * 30 + y * 6 + x) % 256) as f64 / 255.0).unwrap();
        for name in ["f.png", "f.ppm"] {
            let p = dir.path().join(name);
            write_frame(&p, &f).unwrap();
            assert!(read_frame(&p).unwrap().pixels().max_abs_diff(f.pixels()).unwrap() < 1e-12);
        }
    }

    #[test]
    fn manifest_parsing() {
        let m = parse_manifest("# seq\na.png a_gt.png\nb.png\n\nc.png c_gt.png\n", Path::new("/data")).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m[0].mask.as_deref(), Some(Path::new("/data/a_gt.png")));
        assert_eq!(m[1].mask, None);
        assert!(parse_manifest("a.png\n", Path::new(".")).is_err());
        assert!(parse_manifest("", Path::new(".")).is_err());
        assert!(parse_manifest("a b c\n", Path::new(".")).is_err());
    }
}
