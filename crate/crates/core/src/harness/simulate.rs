//! Replays insert/touch traces against the temporal memory bank.
//!
//! Trace lines are `insert <frame>` or `touch <frame> <amount>`; blank lines
//! and `#` comments are skipped. Touching a frame that is not stored is a
//! no-op.

use crate::error::{Result, StmaError};
use crate::memory::{TemporalMemory, UsageUpdate};
use crate::oracle::{ReferenceLfu, TraceOp};

pub fn parse_trace(text: &str) -> Result<Vec<TraceOp>> {
    let mut ops = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || StmaError::Parse(format!("trace line {}: cannot parse '{line}'", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        let op = match fields.as_slice() {
            ["insert", f] => TraceOp::Insert(f.parse().map_err(|_| bad())?),
            ["touch", f, a] => {
                let amount: f64 = a.parse().map_err(|_| bad())?;
                if !amount.is_finite() || amount < 0.0 {
                    return Err(bad());
                }
                TraceOp::Touch(f.parse().map_err(|_| bad())?, amount)
            }
            _ => return Err(bad()),
        };
        ops.push(op);
    }
    Ok(ops)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Simulator {
    /// The production memory bank.
    Bank,
    /// The independent priority-queue simulator.
    Reference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    /// `(step, evicted frame)` in trace order; steps count from 0.
    pub evictions: Vec<(usize, usize)>,
    /// Final `(frame, usage, pinned)`, ascending by frame.
    pub entries: Vec<(usize, f64, bool)>,
}

impl SimulationResult {
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (step, frame) in &self.evictions {
            s.push_str(&format!("evict\t{step}\t{frame}\n"));
        }
        for (frame, usage, pinned) in &self.entries {
            s.push_str(&format!("entry\t{frame}\t{usage}\t{pinned}\n"));
        }
        s
    }
}

/// Runs `ops` against a bank of `capacity` entries. With `pin_first` the
/// first insert is never evicted.
pub fn simulate(ops: &[TraceOp], capacity: usize, pin_first: bool, which: Simulator) -> Result<SimulationResult> {
    match which {
        Simulator::Bank => simulate_bank(ops, capacity, pin_first),
        Simulator::Reference => {
            if !pin_first {
                return Err(StmaError::contract("the reference simulator always pins the first insert"));
            }
            if capacity < 2 {
                return Err(StmaError::contract("capacity must be at least 2"));
            }
            let mut lfu = ReferenceLfu::new(capacity);
            let mut evictions = Vec::new();
            let mut first = None;
            for (step, &op) in ops.iter().enumerate() {
                if let (TraceOp::Insert(f), None) = (op, first) {
                    first = Some(f);
                }
                if let Some(f) = lfu.apply(op) {
                    evictions.push((step, f));
                }
            }
            let entries = lfu.entries().into_iter().map(|(f, u)| (f, u, Some(f) == first)).collect();
            Ok(SimulationResult { evictions, entries })
        }
    }
}

fn simulate_bank(ops: &[TraceOp], capacity: usize, pin_first: bool) -> Result<SimulationResult> {
    let mut mem: TemporalMemory<()> =
        if pin_first { TemporalMemory::new(capacity)? } else { TemporalMemory::unpinned(capacity)? };
    let mut evictions = Vec::new();
    for (step, &op) in ops.iter().enumerate() {
        match op {
            TraceOp::Insert(f) => {
                if let Some(e) = mem.insert(f, ())? {
                    evictions.push((step, e.frame_idx));
                }
            }
            TraceOp::Touch(f, amount) => {
                if let Some(pos) = mem.position_of(f) {
                    let mut inc = vec![0.0; mem.len()];
                    inc[pos] = amount;
                    mem.touch(&UsageUpdate::new(inc)?)?;
                }
            }
        }
        mem.audit()?;
    }
    let mut entries: Vec<_> = mem.entries().iter().map(|e| (e.frame_idx, e.usage, e.pinned)).collect();
    entries.sort_by_key(|e| e.0);
    Ok(SimulationResult { evictions, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let ops = parse_trace("# t\ninsert 0\ntouch 0 1.5\n\ninsert 3 # late\n").unwrap();
        assert_eq!(ops, vec![TraceOp::Insert(0), TraceOp::Touch(0, 1.5), TraceOp::Insert(3)]);
        for bad in ["insert", "insert x", "touch 1", "touch 1 -2", "evict 1", "touch 1 nan"] {
            assert!(parse_trace(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn bank_and_reference_agree() {
        let ops = parse_trace(
            "insert 0\ninsert 1\ntouch 1 3\ninsert 2\ntouch 2 0.5\ninsert 3\ninsert 4\ntouch 0 9\ninsert 5\n",
        )
        .unwrap();
        let a = simulate(&ops, 3, true, Simulator::Bank).unwrap();
        let b = simulate(&ops, 3, true, Simulator::Reference).unwrap();
        assert_eq!(a.evictions, b.evictions);
        assert_eq!(a.entries.len(), b.entries.len());
        for (x, y) in a.entries.iter().zip(&b.entries) {
            assert_eq!((x.0, x.2), (y.0, y.2));
            assert!((x.1 - y.1).abs() < 1e-12);
        }
    }

    #[test]
    fn tsv_layout() {
        let ops = parse_trace("insert 0\ninsert 1\ninsert 2").unwrap();
        let r = simulate(&ops, 2, true, Simulator::Bank).unwrap();
        assert_eq!(r.to_tsv(), "evict\t2\t1\nentry\t0\t0\ttrue\nentry\t2\t0\tfalse\n");
    }
}
