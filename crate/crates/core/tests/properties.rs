use proptest::prelude::*;

use stma_core::harness::losses::{bootstrapped_ce, combined_loss, dice_loss};
use stma_core::harness::metrics::{boundary_precision_recall, contour_accuracy, region_similarity, EvalRecord};
use stma_core::harness::simulate::{simulate, Simulator};
use stma_core::harness::synth::{render_sequence, ObjectSpec, Shape};
use stma_core::idassoc::aggregate;
use stma_core::masks::TargetMasks;
use stma_core::memory::{SpatialMemory, TemporalMemory, UsageUpdate};
use stma_core::oracle::TraceOp;
use stma_core::tensor::{ops, Tensor};

fn masks(h: usize, w: usize, n: u8) -> impl Strategy<Value = TargetMasks> {
    prop::collection::vec(0..=n, h * w).prop_map(move |ids| TargetMasks::new(h, w, n as usize, ids).unwrap())
}

fn mask_pair() -> impl Strategy<Value = (TargetMasks, TargetMasks)> {
    (2usize..10, 2usize..10).prop_flat_map(|(h, w)| (masks(h, w, 2), masks(h, w, 2)))
}

fn trace() -> impl Strategy<Value = Vec<TraceOp>> {
    prop::collection::vec((any::<bool>(), 0usize..6, 0u8..8), 1..200).prop_map(|raw| {
        let mut next = 0;
        let mut ops = vec![TraceOp::Insert(0)];
        for (ins, f, amt) in raw {
            if ins {
                next += 1;
                ops.push(TraceOp::Insert(next));
            } else {
                ops.push(TraceOp::Touch(f.min(next), f64::from(amt) / 2.0));
            }
        }
        ops
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_stay_in_unit_interval((p, g) in mask_pair(), tol in 1usize..3) {
        for t in 1..=2 {
            let j = region_similarity(&p, &g, t).unwrap();
            let f = contour_accuracy(&p, &g, t, tol).unwrap();
            prop_assert!((0.0..=1.0).contains(&j) && (0.0..=1.0).contains(&f));
        }
    }

    #[test]
    fn j_is_symmetric_and_f_swaps_precision_and_recall((p, g) in mask_pair(), tol in 1usize..3) {
        for t in 1..=2 {
            prop_assert_eq!(region_similarity(&p, &g, t).unwrap(), region_similarity(&g, &p, t).unwrap());
            let (pr, rc) = boundary_precision_recall(&p, &g, t, tol).unwrap();
            let (pr2, rc2) = boundary_precision_recall(&g, &p, t, tol).unwrap();
            prop_assert_eq!((pr, rc), (rc2, pr2));
            prop_assert_eq!(contour_accuracy(&p, &g, t, tol).unwrap(), contour_accuracy(&g, &p, t, tol).unwrap());
        }
    }

    #[test]
    fn j_and_f_is_mean_of_means((p, g) in mask_pair(), (q, r) in mask_pair()) {
        let rec = if (q.height(), q.width()) == (p.height(), p.width()) {
            EvalRecord::evaluate(&[(1, &p, &g), (2, &q, &r)]).unwrap()
        } else {
            EvalRecord::evaluate(&[(1, &p, &g)]).unwrap()
        };
        prop_assert_eq!(rec.j_and_f(), (rec.mean_j() + rec.mean_f()) / 2.0);
    }

    #[test]
    fn bank_matches_reference_simulator(ops in trace(), cap in 2usize..6) {
        let a = simulate(&ops, cap, true, Simulator::Bank).unwrap();
        let b = simulate(&ops, cap, true, Simulator::Reference).unwrap();
        prop_assert_eq!(a.evictions, b.evictions);
        prop_assert_eq!(a.entries, b.entries);
    }

    #[test]
    fn victim_has_minimal_usage(ops in trace(), cap in 2usize..6) {
        let mut mem: TemporalMemory<()> = TemporalMemory::new(cap).unwrap();
        for op in ops {
            match op {
                TraceOp::Insert(f) => {
                    let before: Vec<(f64, bool)> = mem.entries().iter().map(|e| (e.usage, e.pinned)).collect();
                    let baseline = if before.is_empty() { 0.0 } else { before.iter().map(|e| e.0).sum::<f64>() / before.len() as f64 };
                    if let Some(victim) = mem.insert(f, ()).unwrap() {
                        prop_assert!(!victim.pinned);
                        let floor = before.iter().filter(|e| !e.1).map(|e| e.0).fold(baseline, f64::min);
                        prop_assert_eq!(victim.usage, floor);
                    }
                }
                TraceOp::Touch(f, a) => {
                    if let Some(pos) = mem.position_of(f) {
                        let mut inc = vec![0.0; mem.len()];
                        inc[pos] = a;
                        mem.touch(&UsageUpdate::new(inc).unwrap()).unwrap();
                    }
                }
            }
            prop_assert!(mem.len() <= cap);
            prop_assert_eq!(mem.entries()[0].frame_idx, 0);
        }
    }

    #[test]
    fn spatial_memory_is_bounded_fifo(cap in 1usize..6, stride in 1usize..5, frames in 1usize..60) {
        let mut mem: SpatialMemory<()> = SpatialMemory::new(cap, stride).unwrap();
        for f in 0..frames {
            mem.insert(f, ()).unwrap();
            prop_assert!(mem.len() <= cap);
            prop_assert_eq!(mem.pinned().map(|e| e.frame_idx), Some(0));
            mem.audit().unwrap();
        }
        let stored = mem.frame_indices();
        let expected_tail: Vec<usize> = (1..frames).filter(|f| f % stride == 0).collect();
        let keep = cap - 1;
        let tail = &expected_tail[expected_tail.len().saturating_sub(keep)..];
        prop_assert_eq!(&stored[1..], tail);
    }

    #[test]
    fn aggregation_is_a_distribution(logits in prop::collection::vec(-8.0f64..8.0, 3 * 16)) {
        let t = Tensor::new(vec![3, 4, 4], logits).unwrap();
        let agg = aggregate(&t).unwrap();
        for px in 0..16 {
            let s: f64 = (0..4).map(|k| agg.probs.data()[k * 16 + px]).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        prop_assert!(agg.masks.ids().iter().all(|&v| v <= 3));
    }

    #[test]
    fn losses_are_nonnegative(logits in prop::collection::vec(-5.0f64..5.0, 2 * 36), gt in masks(6, 6, 2), keep in 0.05f64..1.0) {
        let probs = aggregate(&Tensor::new(vec![2, 6, 6], logits).unwrap()).unwrap().probs;
        prop_assert!(bootstrapped_ce(&probs, &gt, keep).unwrap() >= 0.0);
        prop_assert!(combined_loss(&probs, &gt, keep).unwrap() >= 0.0);
        for j in 1..=2 {
            let p = ops::slice_rows(&probs.reshape(&[3, 36]).unwrap(), j, j + 1).unwrap();
            let g = Tensor::from_fn(&[1, 36], |i| f64::from(gt.ids()[i] as usize == j));
            prop_assert!(dice_loss(&p, &g).unwrap() >= 0.0);
        }
    }

    #[test]
    fn perfect_prediction_has_zero_loss(gt in masks(5, 7, 3)) {
        let probs = Tensor::from_fn(&[4, 5, 7], |i| f64::from(gt.ids()[i % 35] as usize == i / 35));
        prop_assert_eq!(combined_loss(&probs, &gt, 0.25).unwrap(), 0.0);
    }

    #[test]
    fn synthetic_masks_follow_the_motion_formula(
        oy in 0usize..20, ox in 0usize..24, vy in -3isize..=3, vx in -3isize..=3, side in 2usize..8, k in 0usize..10,
    ) {
        let obj = ObjectSpec { shape: Shape::Rect { height: side, width: side }, origin: (oy, ox), velocity: (vy, vx), color: [1.0; 3] };
        let seq = render_sequence(20, 24, k + 1, [0.0; 3], &[obj], 0).unwrap();
        let py = (oy as i64 + vy as i64 * k as i64).rem_euclid(20) as usize;
        let px = (ox as i64 + vx as i64 * k as i64).rem_euclid(24) as usize;
        for y in 0..20 {
            for x in 0..24 {
                let inside = (y + 20 - py) % 20 < side && (x + 24 - px) % 24 < side;
                prop_assert_eq!(seq.masks[k].at(y, x), u8::from(inside));
            }
        }
    }
}
