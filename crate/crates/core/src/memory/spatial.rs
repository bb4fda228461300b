use std::collections::VecDeque;

use crate::error::{Result, StmaError};

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialEntry<T> {
    pub frame_idx: usize,
    pub payload: T,
}

/// What an insertion did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialOutcome {
    /// First frame offered; pinned for the life of the memory.
    Pinned,
    /// Appended to the queue, possibly evicting the oldest queued frame.
    Queued { evicted: Option<usize> },
    /// Not on the insertion stride; memory unchanged.
    Skipped,
}

/// Reference-frame bank: the first frame stays pinned, later frames on the
/// insertion stride enter a FIFO queue.
///
/// `|queue| + pinned ≤ capacity` holds after every operation.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMemory<T> {
    capacity: usize,
    stride: usize,
    pinned: Option<SpatialEntry<T>>,
    queue: VecDeque<SpatialEntry<T>>,
}

impl<T> SpatialMemory<T> {
    pub fn new(capacity: usize, stride: usize) -> Result<Self> {
        if capacity == 0 || stride == 0 {
            return Err(StmaError::contract("spatial memory needs capacity ≥ 1 and stride ≥ 1"));
        }
        Ok(Self { capacity, stride, pinned: None, queue: VecDeque::new() })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn len(&self) -> usize {
        self.queue.len() + usize::from(self.pinned.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pinned(&self) -> Option<&SpatialEntry<T>> {
        self.pinned.as_ref()
    }

    pub fn queue(&self) -> impl Iterator<Item = &SpatialEntry<T>> {
        self.queue.iter()
    }

    fn last_index(&self) -> Option<usize> {
        self.queue.back().or(self.pinned.as_ref()).map(|e| e.frame_idx)
    }

    pub fn insert(&mut self, frame_idx: usize, payload: T) -> Result<SpatialOutcome> {
        if let Some(last) = self.last_index() {
            if frame_idx <= last {
                return Err(StmaError::contract(format!("frame {frame_idx} is not after stored frame {last}")));
            }
        }
        if self.pinned.is_none() {
            self.pinned = Some(SpatialEntry { frame_idx, payload });
            return Ok(SpatialOutcome::Pinned);
        }
        if !frame_idx.is_multiple_of(self.stride) {
            return Ok(SpatialOutcome::Skipped);
        }
        self.queue.push_back(SpatialEntry { frame_idx, payload });
        let evicted = if self.len() > self.capacity { self.queue.pop_front().map(|e| e.frame_idx) } else { None };
        Ok(SpatialOutcome::Queued { evicted })
    }

    /// Pinned entry then queue, oldest first.
    pub fn references(&self) -> Result<Vec<&SpatialEntry<T>>> {
        let pinned = self
            .pinned
            .as_ref()
            .ok_or_else(|| StmaError::contract("spatial memory is empty; insert the first frame before reading"))?;
        Ok(std::iter::once(pinned).chain(self.queue.iter()).collect())
    }

    pub fn frame_indices(&self) -> Vec<usize> {
        self.pinned.iter().chain(self.queue.iter()).map(|e| e.frame_idx).collect()
    }

    /// Checks capacity, the pin, and ascending frame order.
    pub fn audit(&self) -> Result<()> {
        if self.len() > self.capacity {
            return Err(StmaError::contract("spatial memory over capacity"));
        }
        if self.pinned.is_none() && !self.queue.is_empty() {
            return Err(StmaError::contract("spatial queue populated without a pinned frame"));
        }
        if self.frame_indices().windows(2).any(|w| w[0] >= w[1]) {
            return Err(StmaError::contract("spatial entries out of frame order"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_insert_pins() {
        let mut m = SpatialMemory::new(3, 3).unwrap();
        assert_eq!(m.insert(0, ()).unwrap(), SpatialOutcome::Pinned);
        assert_eq!(m.frame_indices(), vec![0]);
        assert_eq!(m.references().unwrap().len(), 1);
    }

    #[test]
    fn fifo_with_pin() {
        let mut m = SpatialMemory::new(3, 3).unwrap();
        for f in [0, 3, 6, 9] {
            m.insert(f, ()).unwrap();
        }
        assert_eq!(m.pinned().unwrap().frame_idx, 0);
        assert_eq!(m.queue().map(|e| e.frame_idx).collect::<Vec<_>>(), vec![6, 9]);
    }

    #[test]
    fn off_stride_frames_are_skipped() {
        let mut m = SpatialMemory::new(3, 3).unwrap();
        m.insert(0, ()).unwrap();
        let before = m.clone();
        assert_eq!(m.insert(4, ()).unwrap(), SpatialOutcome::Skipped);
        assert_eq!(m, before);
    }

    #[test]
    fn reference_order_is_pinned_old_new() {
        let mut m = SpatialMemory::new(3, 5).unwrap();
        for f in [2, 5, 10] {
            m.insert(f, f).unwrap();
        }
        let refs: Vec<usize> = m.references().unwrap().iter().map(|e| e.payload).collect();
        assert_eq!(refs, vec![2, 5, 10]);
    }

    #[test]
    fn long_runs_stay_at_capacity() {
        let mut m = SpatialMemory::new(4, 1).unwrap();
        for f in 0..100 {
            m.insert(f, ()).unwrap();
        }
        assert_eq!(m.references().unwrap().len(), 4);
        assert_eq!(m.frame_indices(), vec![0, 97, 98, 99]);
    }

    #[test]
    fn errors() {
        let mut m: SpatialMemory<()> = SpatialMemory::new(2, 3).unwrap();
        assert!(m.references().is_err());
        m.insert(3, ()).unwrap();
        assert!(m.insert(3, ()).is_err());
        assert!(m.insert(1, ()).is_err());
        assert!(SpatialMemory::<()>::new(0, 3).is_err());
    }

    #[test]
    fn capacity_one_keeps_only_the_pin() {
        let mut m = SpatialMemory::new(1, 1).unwrap();
        m.insert(0, ()).unwrap();
        assert_eq!(m.insert(1, ()).unwrap(), SpatialOutcome::Queued { evicted: Some(1) });
        assert_eq!(m.frame_indices(), vec![0]);
    }
}
