//! Reference block: one attention over all stacked rows with an explicit
//! visibility matrix, evaluated query by query.

use super::{StmlState, StmlWeights};
use crate::error::{Result, StmaError};
use crate::oracle::{masked_attention_rows, rows_of};
use crate::tensor::{ops, Tensor};

/// Square boolean matrix: `visible(i, j)` means stacked row `i` may attend to
/// stacked row `j`. Rows are ordered `[objects; ref_1; …; ref_m; test]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Visibility {
    size: usize,
    cells: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stream {
    Object,
    Reference(usize),
    Test,
}

fn stream_of(row: usize, n: usize, m: usize, len: usize) -> Stream {
    if row < n {
        Stream::Object
    } else if row < n + m * len {
        Stream::Reference((row - n) / len)
    } else {
        Stream::Test
    }
}

impl Visibility {
    pub fn new(size: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != size * size {
            return Err(StmaError::contract(format!("visibility needs {} cells, got {}", size * size, cells.len())));
        }
        Ok(Self { size, cells })
    }

    fn from_rule(n: usize, m: usize, len: usize, rule: impl Fn(Stream, Stream) -> bool) -> Self {
        let size = n + (m + 1) * len;
        let cells =
            (0..size * size).map(|k| rule(stream_of(k / size, n, m, len), stream_of(k % size, n, m, len))).collect();
        Self { size, cells }
    }

    /// Objects see objects; reference `i` sees itself and the objects; the
    /// test map sees itself and every reference.
    pub fn asymmetric(n: usize, m: usize, len: usize) -> Self {
        Self::from_rule(n, m, len, |q, k| match (q, k) {
            (Stream::Object, Stream::Object) => true,
            (Stream::Reference(i), Stream::Reference(j)) => i == j,
            (Stream::Reference(_), Stream::Object) => true,
            (Stream::Test, Stream::Test | Stream::Reference(_)) => true,
            _ => false,
        })
    }

    /// The asymmetric pattern with a deliberate defect (test rows also see
    /// the objects), used as a negative control.
    pub fn asymmetric_faulty(n: usize, m: usize, len: usize) -> Self {
        let mut v = Self::asymmetric(n, m, len);
        let size = v.size;
        for q in size - len..size {
            for k in 0..n {
                v.cells[q * size + k] = true;
            }
        }
        v
    }

    /// Asymmetric pattern with every object column hidden; object rows see
    /// only objects so they stay well defined.
    pub fn without_objects(n: usize, m: usize, len: usize) -> Self {
        Self::from_rule(n, m, len, |q, k| match (q, k) {
            (Stream::Object, Stream::Object) => true,
            (_, Stream::Object) => false,
            (Stream::Reference(i), Stream::Reference(j)) => i == j,
            (Stream::Test, Stream::Test | Stream::Reference(_)) => true,
            _ => false,
        })
    }

    pub fn all(n: usize, m: usize, len: usize) -> Self {
        Self::from_rule(n, m, len, |_, _| true)
    }

    /// Every stream sees only itself.
    pub fn block_diagonal(n: usize, m: usize, len: usize) -> Self {
        Self::from_rule(n, m, len, |q, k| q == k)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, query: usize, key: usize) -> bool {
        self.cells[query * self.size + key]
    }
}

/// Full pre-LN block evaluated as a single masked attention over the stacked
/// rows. Used only to check the decomposed block.
pub fn joint_attention_oracle(state: &StmlState, w: &StmlWeights, visibility: &Visibility) -> Result<StmlState> {
    state.validate()?;
    let x = state.stacked_rows()?;
    let (rows, _) = x.dims2()?;
    if visibility.size() != rows {
        return Err(StmaError::contract(format!(
            "visibility is {0}x{0} but the state stacks {rows} rows",
            visibility.size()
        )));
    }
    if (0..rows).any(|q| (0..rows).all(|k| !visibility.get(q, k))) {
        return Err(StmaError::contract("visibility leaves a row with no visible key"));
    }

    let normed = w.ln_attn.apply(&x)?;
    let q = ops::matmul(&normed, &w.w_q)?;
    let k = ops::matmul(&normed, &w.w_k)?;
    let v = ops::matmul(&normed, &w.w_v)?;
    let d = w.head_dim();
    let mut merged = vec![Vec::with_capacity(w.channels()); rows];
    for h in 0..w.heads {
        let head = |t: &Tensor| -> Result<Vec<Vec<f64>>> { Ok(rows_of(&ops::slice_cols(t, h * d, (h + 1) * d)?)) };
        let out = masked_attention_rows(&head(&q)?, &head(&k)?, &head(&v)?, 1.0 / (d as f64).sqrt(), |i, j| {
            visibility.get(i, j)
        });
        for (dst, src) in merged.iter_mut().zip(out) {
            dst.extend(src);
        }
    }
    let attn = ops::matmul(&Tensor::from_rows(&merged)?, &w.w_o)?;
    let mid = ops::add(&x, &attn)?;
    let out = ops::add(&mid, &w.feed_forward(&w.ln_ffn.apply(&mid)?)?)?;
    state.unstack_like(&out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::FeatureMap;
    use crate::init::{seeded_rng, uniform};
    use crate::stml::{stml_block, AttentionMode, ObjectFeatures};

    fn state(seed: u64, len: usize, c: usize, m: usize, n: usize) -> StmlState {
        let mut rng = seeded_rng(seed);
        let mut fm = || FeatureMap::new(uniform(&mut rng, &[len, c], -1.0, 1.0), len, 1).unwrap();
        let test = fm();
        let references = (0..m).map(|_| fm()).collect();
        StmlState {
            test,
            references,
            objects: ObjectFeatures::new(uniform(&mut seeded_rng(seed + 1000), &[n, c], -1.0, 1.0)).unwrap(),
        }
    }

    #[test]
    fn asymmetric_mask_reproduces_full_mode() {
        let s = state(1, 4, 8, 2, 3);
        let w = StmlWeights::random(&mut seeded_rng(2), 8, 2).unwrap();
        let full = stml_block(&s, &w, AttentionMode::Full).unwrap();
        let oracle = joint_attention_oracle(&s, &w, &Visibility::asymmetric(3, 2, 4)).unwrap();
        assert!(full.max_abs_diff(&oracle).unwrap() < 1e-10);
    }

    #[test]
    fn all_visible_reproduces_joint_mode() {
        let s = state(3, 4, 8, 2, 2);
        let w = StmlWeights::random(&mut seeded_rng(4), 8, 4).unwrap();
        let joint = stml_block(&s, &w, AttentionMode::Joint).unwrap();
        let oracle = joint_attention_oracle(&s, &w, &Visibility::all(2, 2, 4)).unwrap();
        assert!(joint.max_abs_diff(&oracle).unwrap() < 1e-10);
    }

    #[test]
    fn block_diagonal_isolates_every_stream() {
        let s = state(5, 4, 8, 2, 2);
        let w = StmlWeights::random(&mut seeded_rng(6), 8, 2).unwrap();
        let oracle = joint_attention_oracle(&s, &w, &Visibility::block_diagonal(2, 2, 4)).unwrap();
        let full = stml_block(&s, &w, AttentionMode::Full).unwrap();
        let no_obj = stml_block(&s, &w, AttentionMode::NoObject).unwrap();
        let no_spatial = stml_block(&s, &w, AttentionMode::NoSpatial).unwrap();
        assert!(oracle.objects.vectors.max_abs_diff(&full.objects.vectors).unwrap() < 1e-10);
        for (a, b) in oracle.references.iter().zip(&no_obj.references) {
            assert!(a.tokens.max_abs_diff(&b.tokens).unwrap() < 1e-10);
        }
        assert!(oracle.test.tokens.max_abs_diff(&no_spatial.test.tokens).unwrap() < 1e-10);
    }

    #[test]
    fn faulty_mask_breaks_equivalence() {
        let s = state(7, 4, 8, 2, 2);
        let w = StmlWeights::random(&mut seeded_rng(8), 8, 2).unwrap();
        let full = stml_block(&s, &w, AttentionMode::Full).unwrap();
        let oracle = joint_attention_oracle(&s, &w, &Visibility::asymmetric_faulty(2, 2, 4)).unwrap();
        assert!(full.max_abs_diff(&oracle).unwrap() > 1e-6);
    }

    #[test]
    fn malformed_masks_are_rejected() {
        let s = state(9, 4, 8, 1, 1);
        let w = StmlWeights::random(&mut seeded_rng(10), 8, 2).unwrap();
        assert!(joint_attention_oracle(&s, &w, &Visibility::asymmetric(1, 2, 4)).is_err());
        let empty = Visibility::new(9, vec![false; 81]).unwrap();
        assert!(joint_attention_oracle(&s, &w, &empty).is_err());
        assert!(Visibility::new(3, vec![true; 8]).is_err());
    }
}
