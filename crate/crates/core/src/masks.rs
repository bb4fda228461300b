use crate::error::{Result, StmaError};

/// Per-pixel target IDs, `0` is background and `1..=n` are targets.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TargetMasks {
    height: usize,
    width: usize,
    targets: usize,
    ids: Vec<u8>,
}

impl TargetMasks {
    pub fn new(height: usize, width: usize, targets: usize, ids: Vec<u8>) -> Result<Self> {
        if ids.len() != height * width {
            return Err(StmaError::dim("target masks", &[ids.len()], &[height, width]));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize > targets) {
            return Err(StmaError::contract(format!("mask holds ID {bad} but only {targets} targets exist")));
        }
        Ok(Self { height, width, targets, ids })
    }

    /// Counts targets as the largest ID present.
    pub fn from_ids(height: usize, width: usize, ids: Vec<u8>) -> Result<Self> {
        let targets = ids.iter().copied().max().unwrap_or(0) as usize;
        Self::new(height, width, targets, ids)
    }

    pub fn background(height: usize, width: usize, targets: usize) -> Self {
        Self { height, width, targets, ids: vec![0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn targets(&self) -> usize {
        self.targets
    }

    pub fn ids(&self) -> &[u8] {
        &self.ids
    }

    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.ids[y * self.width + x]
    }

    pub fn with_targets(mut self, targets: usize) -> Result<Self> {
        if self.ids.iter().any(|&id| id as usize > targets) {
            return Err(StmaError::contract("mask holds IDs beyond the new target count"));
        }
        self.targets = targets;
        Ok(self)
    }

    /// Binary plane of target `id`.
    pub fn binary(&self, id: usize) -> Vec<bool> {
        self.ids.iter().map(|&v| v as usize == id).collect()
    }

    /// Relabels targets: ID `j` becomes `perm[j - 1]`; background stays 0.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.targets];
        if perm.len() != self.targets
            || perm.iter().any(|&p| p == 0 || p > self.targets || std::mem::replace(&mut seen[p - 1], true))
        {
            return Err(StmaError::contract(format!("{perm:?} is not a permutation of 1..={}", self.targets)));
        }
        let ids = self.ids.iter().map(|&v| if v == 0 { 0 } else { perm[v as usize - 1] as u8 }).collect();
        Self::new(self.height, self.width, self.targets, ids)
    }

    /// Top-left `height × width` window; undoes `pad_to_multiple`.
    pub fn crop(&self, height: usize, width: usize) -> Result<Self> {
        if height > self.height || width > self.width {
            return Err(StmaError::dim("crop", &[height, width], &[self.height, self.width]));
        }
        let ids = (0..height).flat_map(|y| self.ids[y * self.width..y * self.width + width].iter().copied()).collect();
        Self::new(height, width, self.targets, ids)
    }

    /// Zero-pads bottom/right with background to multiples of `multiple`.
    pub fn pad_to_multiple(&self, multiple: usize) -> Self {
        let (h, w) = (self.height.div_ceil(multiple) * multiple, self.width.div_ceil(multiple) * multiple);
        let mut ids = vec![0; h * w];
        for y in 0..self.height {
            ids[y * w..y * w + self.width].copy_from_slice(&self.ids[y * self.width..(y + 1) * self.width]);
        }
        Self { height: h, width: w, targets: self.targets, ids }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_undoes_padding() {
        let m = TargetMasks::new(3, 5, 2, (0..15).map(|i| (i % 3) as u8).collect()).unwrap();
        let p = m.pad_to_multiple(16);
        assert_eq!((p.height(), p.width()), (16, 16));
        assert_eq!(p.crop(3, 5).unwrap(), m);
        assert!(m.crop(4, 5).is_err());
    }

    #[test]
    fn rejects_ids_beyond_target_count() {
        assert!(TargetMasks::new(1, 3, 1, vec![0, 1, 2]).is_err());
        assert!(TargetMasks::new(1, 2, 1, vec![0, 1, 1]).is_err());
    }

    #[test]
    fn permutation_relabels_targets() {
        let m = TargetMasks::new(1, 4, 3, vec![0, 1, 2, 3]).unwrap();
        assert_eq!(m.permuted(&[3, 1, 2]).unwrap().ids(), &[0, 3, 1, 2]);
        assert!(m.permuted(&[1, 1, 2]).is_err());
    }

    #[test]
    fn padding_adds_background() {
        let m = TargetMasks::new(2, 3, 1, vec![1; 6]).unwrap();
        let p = m.pad_to_multiple(4);
        assert_eq!((p.height(), p.width()), (4, 4));
        assert_eq!(p.at(1, 2), 1);
        assert_eq!(p.at(1, 3), 0);
        assert_eq!(p.at(3, 0), 0);
    }
}
