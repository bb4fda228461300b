use proptest::prelude::*;

use stma_core::embedding::{patchify, unpatchify, Frame};
use stma_core::harness::gradcheck::random_state;
use stma_core::init::seeded_rng;
use stma_core::oracle::{central_difference, relative_error};
use stma_core::stml::{joint_attention_oracle, stml_block, AttentionMode, StmlWeights, Visibility};
use stma_core::tensor::{ops, read_tensor, write_tensor, Tape, Tensor};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..6, 1usize..6, 1usize..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_are_distributions(x in (1usize..6, 1usize..8).prop_flat_map(|(r, c)| matrix(r, c))) {
        let s = ops::softmax_rows(&x).unwrap();
        let (r, _) = s.dims2().unwrap();
        for i in 0..r {
            prop_assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(s.row(i).iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn layernorm_centres_and_scales(x in (1usize..5, 2usize..9).prop_flat_map(|(r, c)| matrix(r, c))) {
        let c = x.shape()[1];
        let y = ops::layernorm(&x, &Tensor::full(&[c], 1.0), &Tensor::zeros(&[c]), 1e-12).unwrap();
        for i in 0..x.shape()[0] {
            let row = y.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            prop_assert!(mean.abs() < 1e-10);
            let spread = x.row(i).iter().fold(0.0f64, |m, v| m.max((v - x.row(i)[0]).abs()));
            if spread > 1e-3 {
                let var = row.iter().map(|v| v * v).sum::<f64>() / c as f64;
                prop_assert!((var - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn matmul_transpose_identity((m, k, n) in dims(), seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let a = stma_core::init::uniform(&mut rng, &[m, k], -1.0, 1.0);
        let b = stma_core::init::uniform(&mut rng, &[k, n], -1.0, 1.0);
        let lhs = ops::transpose(&ops::matmul(&a, &b).unwrap()).unwrap();
        let rhs = ops::matmul(&ops::transpose(&b).unwrap(), &ops::transpose(&a).unwrap()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }

    #[test]
    fn tape_gradient_matches_finite_differences((m, k, n) in dims(), seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let a = stma_core::init::uniform(&mut rng, &[m, k], -1.0, 1.0);
        let b = stma_core::init::uniform(&mut rng, &[k, n], -1.0, 1.0);
        let f = |a: &Tensor| {
            let s = ops::softmax_rows(&ops::matmul(a, &b).unwrap()).unwrap();
            ops::mean(&ops::mul(&s, &s).unwrap()).item().unwrap()
        };
        let mut tape = Tape::new();
        let va = tape.leaf(a.clone());
        let vb = tape.constant(b.clone());
        let p = tape.matmul(va, vb).unwrap();
        let s = tape.softmax_rows(p).unwrap();
        let sq = tape.mul(s, s).unwrap();
        let loss = tape.mean(sq).unwrap();
        let g = tape.backward(loss).unwrap().get(va).unwrap().clone();
        for idx in 0..a.numel() {
            let numeric = central_difference(&a, idx, 1e-5, f);
            prop_assert!(relative_error(g.data()[idx], numeric) < 1e-5);
        }
    }

    #[test]
    fn tensor_bytes_round_trip(shape in prop::collection::vec(1usize..4, 0..4), seed in any::<u64>()) {
        let t = stma_core::init::uniform(&mut seeded_rng(seed), &shape, -1e6, 1e6);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        prop_assert_eq!(read_tensor(&mut buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn patchify_round_trips(gh in 1usize..4, gw in 1usize..4, p in prop::sample::select(vec![1usize, 2, 4]), seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let px = stma_core::init::uniform(&mut rng, &[3, gh * p, gw * p], 0.0, 1.0);
        let frame = Frame::new(px).unwrap();
        let back = unpatchify(&patchify(&frame, p).unwrap(), p, gh * p, gw * p).unwrap();
        prop_assert_eq!(back, frame);
    }

    #[test]
    fn decomposed_block_equals_masked_attention(
        len in 1usize..9, m in 0usize..4, n in 1usize..4, heads in prop::sample::select(vec![1usize, 2, 4]), seed in any::<u64>(),
    ) {
        let mut rng = seeded_rng(seed);
        let c = heads * 2;
        let state = random_state(&mut rng, len, c, m, n).unwrap();
        let w = StmlWeights::random(&mut rng, c, heads).unwrap();
        let full = stml_block(&state, &w, AttentionMode::Full).unwrap();
        let oracle = joint_attention_oracle(&state, &w, &Visibility::asymmetric(n, m, len)).unwrap();
        prop_assert!(full.max_abs_diff(&oracle).unwrap() < 1e-10);
    }
}
