use super::{AttentionMode, BlockConfig, ObjectFeatures, StmlState, StmlWeights, LAYERNORM_EPS};
use crate::embedding::FeatureMap;
use crate::error::{Result, StmaError};
use crate::tensor::{Tape, Tensor, Var};

/// Block parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct WeightVars {
    pub heads: usize,
    pub ln_attn_gamma: Var,
    pub ln_attn_beta: Var,
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub ln_ffn_gamma: Var,
    pub ln_ffn_beta: Var,
    pub ffn_in_w: Var,
    pub ffn_in_b: Var,
    pub ffn_out_w: Var,
    pub ffn_out_b: Var,
}

impl WeightVars {
    /// Records `w` as leaves (differentiable) or constants.
    pub fn record(tape: &mut Tape, w: &StmlWeights, as_leaves: bool) -> Self {
        let mut put = |t: &Tensor| {
            if as_leaves {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        Self {
            heads: w.heads,
            ln_attn_gamma: put(&w.ln_attn.gamma),
            ln_attn_beta: put(&w.ln_attn.beta),
            w_q: put(&w.w_q),
            w_k: put(&w.w_k),
            w_v: put(&w.w_v),
            w_o: put(&w.w_o),
            ln_ffn_gamma: put(&w.ln_ffn.gamma),
            ln_ffn_beta: put(&w.ln_ffn.beta),
            ffn_in_w: put(&w.ffn_in.weight),
            ffn_in_b: put(&w.ffn_in.bias),
            ffn_out_w: put(&w.ffn_out.weight),
            ffn_out_b: put(&w.ffn_out.bias),
        }
    }

    pub fn all(&self) -> Vec<Var> {
        vec![
            self.ln_attn_gamma,
            self.ln_attn_beta,
            self.w_q,
            self.w_k,
            self.w_v,
            self.w_o,
            self.ln_ffn_gamma,
            self.ln_ffn_beta,
            self.ffn_in_w,
            self.ffn_in_b,
            self.ffn_out_w,
            self.ffn_out_b,
        ]
    }
}

/// Block streams recorded on a tape.
#[derive(Debug, Clone)]
pub struct StateVars {
    pub test: Var,
    pub references: Vec<Var>,
    pub objects: Var,
}

impl StateVars {
    pub fn record(tape: &mut Tape, state: &StmlState, as_leaves: bool) -> Self {
        let mut put = |t: &Tensor| {
            if as_leaves {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        Self {
            objects: put(&state.objects.vectors),
            references: state.references.iter().map(|r| put(&r.tokens)).collect(),
            test: put(&state.test.tokens),
        }
    }

    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![self.objects];
        v.extend(&self.references);
        v.push(self.test);
        v
    }

    /// Reads recorded values back into a state shaped like `like`.
    pub fn read(&self, tape: &Tape, like: &StmlState) -> Result<StmlState> {
        let map = |v: Var, fm: &FeatureMap| -> Result<FeatureMap> {
            FeatureMap::new(tape.value(v)?.clone(), fm.grid_h, fm.grid_w)
        };
        Ok(StmlState {
            test: map(self.test, &like.test)?,
            references: self
                .references
                .iter()
                .zip(&like.references)
                .map(|(&v, fm)| map(v, fm))
                .collect::<Result<_>>()?,
            objects: ObjectFeatures::new(tape.value(self.objects)?.clone())?,
        })
    }
}

struct Projected {
    q: Var,
    k: Var,
    v: Var,
}

fn project(tape: &mut Tape, x: Var, w: &WeightVars) -> Result<Projected> {
    Ok(Projected { q: tape.matmul(x, w.w_q)?, k: tape.matmul(x, w.w_k)?, v: tape.matmul(x, w.w_v)? })
}

/// Multi-head scaled dot-product attention followed by the output
/// projection. `logit_bias`, when given, is added to every head's logits.
fn attend(tape: &mut Tape, q: Var, k: Var, v: Var, w: &WeightVars, logit_bias: Option<Var>) -> Result<Var> {
    let c = tape.value(q)?.dims2()?.1;
    let d = c / w.heads;
    let scale = 1.0 / (d as f64).sqrt();
    let kt = tape.transpose(k)?;
    let mut heads = Vec::with_capacity(w.heads);
    for h in 0..w.heads {
        let (lo, hi) = (h * d, (h + 1) * d);
        let qh = tape.slice_cols(q, lo, hi)?;
        let kth = tape.slice_rows(kt, lo, hi)?;
        let vh = tape.slice_cols(v, lo, hi)?;
        let logits = tape.matmul(qh, kth)?;
        let mut logits = tape.scale(logits, scale)?;
        if let Some(bias) = logit_bias {
            logits = tape.add(logits, bias)?;
        }
        let weights = tape.softmax_rows(logits)?;
        heads.push(tape.matmul(weights, vh)?);
    }
    let merged = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
    tape.matmul(merged, w.w_o)
}

fn concat_keys(tape: &mut Tape, parts: &[&Projected]) -> Result<(Var, Var)> {
    if parts.len() == 1 {
        return Ok((parts[0].k, parts[0].v));
    }
    let ks: Vec<Var> = parts.iter().map(|p| p.k).collect();
    let vs: Vec<Var> = parts.iter().map(|p| p.v).collect();
    Ok((tape.concat_rows(&ks)?, tape.concat_rows(&vs)?))
}

fn object_stream(tape: &mut Tape, obj: &Projected, w: &WeightVars) -> Result<Var> {
    attend(tape, obj.q, obj.k, obj.v, w, None)
}

fn reference_stream(
    tape: &mut Tape,
    reference: &Projected,
    obj: Option<&Projected>,
    w: &WeightVars,
    logit_bias: Option<Var>,
) -> Result<Var> {
    let parts: Vec<&Projected> = std::iter::once(reference).chain(obj).collect();
    let (k, v) = concat_keys(tape, &parts)?;
    attend(tape, reference.q, k, v, w, logit_bias)
}

fn test_stream(tape: &mut Tape, test: &Projected, refs: &[Projected], w: &WeightVars) -> Result<Var> {
    let parts: Vec<&Projected> = std::iter::once(test).chain(refs).collect();
    let (k, v) = concat_keys(tape, &parts)?;
    attend(tape, test.q, k, v, w, None)
}

fn layernorm_attn(tape: &mut Tape, x: Var, w: &WeightVars) -> Result<Var> {
    tape.layernorm(x, w.ln_attn_gamma, w.ln_attn_beta, LAYERNORM_EPS)
}

/// `x + FFN(LN(x))`.
fn feed_forward_residual(tape: &mut Tape, x: Var, w: &WeightVars) -> Result<Var> {
    let n = tape.layernorm(x, w.ln_ffn_gamma, w.ln_ffn_beta, LAYERNORM_EPS)?;
    let h = tape.matmul(n, w.ffn_in_w)?;
    let h = tape.add_row_bias(h, w.ffn_in_b)?;
    let h = tape.relu(h)?;
    let o = tape.matmul(h, w.ffn_out_w)?;
    let o = tape.add_row_bias(o, w.ffn_out_b)?;
    tape.add(x, o)
}

fn residual_stream(tape: &mut Tape, x: Var, attn: Var, w: &WeightVars) -> Result<Var> {
    let mid = tape.add(x, attn)?;
    feed_forward_residual(tape, mid, w)
}

/// One block recorded on `tape`.
pub fn stml_block_on_tape(tape: &mut Tape, state: &StateVars, w: &WeightVars, cfg: BlockConfig) -> Result<StateVars> {
    if cfg.mode == AttentionMode::Joint {
        return joint_block_on_tape(tape, state, w, cfg);
    }
    let use_objects = cfg.mode != AttentionMode::NoObject;
    let use_refs = cfg.mode != AttentionMode::NoSpatial;

    let obj_n = layernorm_attn(tape, state.objects, w)?;
    let obj_p = project(tape, obj_n, w)?;
    let mut ref_p = Vec::new();
    if use_refs {
        for &r in &state.references {
            let rn = layernorm_attn(tape, r, w)?;
            ref_p.push(project(tape, rn, w)?);
        }
    }
    let test_n = layernorm_attn(tape, state.test, w)?;
    let test_p = project(tape, test_n, w)?;

    let objects = if use_objects && cfg.update_objects {
        let a = object_stream(tape, &obj_p, w)?;
        residual_stream(tape, state.objects, a, w)?
    } else {
        state.objects
    };

    let references = if use_refs {
        let mut out = Vec::with_capacity(ref_p.len());
        for (&r, rp) in state.references.iter().zip(&ref_p) {
            let a = reference_stream(tape, rp, use_objects.then_some(&obj_p), w, None)?;
            out.push(residual_stream(tape, r, a, w)?);
        }
        out
    } else {
        state.references.clone()
    };

    let a = test_stream(tape, &test_p, &ref_p, w)?;
    let test = residual_stream(tape, state.test, a, w)?;

    Ok(StateVars { test, references, objects })
}

fn joint_block_on_tape(tape: &mut Tape, state: &StateVars, w: &WeightVars, cfg: BlockConfig) -> Result<StateVars> {
    if state.references.is_empty() {
        return Err(StmaError::contract("joint attention needs at least one reference"));
    }
    let n = tape.value(state.objects)?.dims2()?.0;
    let len = tape.value(state.test)?.dims2()?.0;
    let stacked = tape.concat_rows(&state.all())?;
    let normed = layernorm_attn(tape, stacked, w)?;
    let p = project(tape, normed, w)?;
    let a = attend(tape, p.q, p.k, p.v, w, None)?;
    let out = residual_stream(tape, stacked, a, w)?;

    let objects = if cfg.update_objects { tape.slice_rows(out, 0, n)? } else { state.objects };
    let mut references = Vec::with_capacity(state.references.len());
    for i in 0..state.references.len() {
        let start = n + i * len;
        references.push(tape.slice_rows(out, start, start + len)?);
    }
    let start = n + state.references.len() * len;
    let test = tape.slice_rows(out, start, start + len)?;
    Ok(StateVars { test, references, objects })
}

fn check_weights(w: &StmlWeights, c: usize) -> Result<()> {
    w.validate()?;
    if w.channels() != c {
        return Err(StmaError::dim("stml weights", w.w_q.shape(), &[c]));
    }
    Ok(())
}

/// Applies one block to `state`.
pub fn stml_block(state: &StmlState, w: &StmlWeights, cfg: impl Into<BlockConfig>) -> Result<StmlState> {
    let cfg = cfg.into();
    state.validate()?;
    check_weights(w, state.channels())?;
    if cfg.mode == AttentionMode::Joint && state.references.is_empty() {
        return Err(StmaError::contract("joint attention needs at least one reference"));
    }
    let mut tape = Tape::new();
    let sv = StateVars::record(&mut tape, state, false);
    let wv = WeightVars::record(&mut tape, w, false);
    let out = stml_block_on_tape(&mut tape, &sv, &wv, cfg)?;
    out.read(&tape, state)
}

/// Applies the blocks in order.
pub fn stml_forward(state: &StmlState, weights: &[StmlWeights], cfg: impl Into<BlockConfig>) -> Result<StmlState> {
    let cfg = cfg.into();
    if weights.is_empty() {
        return Err(StmaError::contract("stml_forward needs at least one block"));
    }
    let mut current = state.clone();
    for w in weights {
        current = stml_block(&current, w, cfg)?;
    }
    Ok(current)
}

/// `softmax(q^o k^oᵀ/√d) v^o` per head, merged and output-projected.
pub fn object_self_attention(objects: &ObjectFeatures, w: &StmlWeights) -> Result<ObjectFeatures> {
    check_weights(w, objects.vectors.dims2()?.1)?;
    let mut tape = Tape::new();
    let wv = WeightVars::record(&mut tape, w, false);
    let o = tape.constant(objects.vectors.clone());
    let p = project(&mut tape, o, &wv)?;
    let out = object_stream(&mut tape, &p, &wv)?;
    ObjectFeatures::new(tape.value(out)?.clone())
}

/// Queries from `reference`; keys/values from `[reference; objects]`.
pub fn reference_object_enhancement(
    reference: &FeatureMap,
    objects: &ObjectFeatures,
    w: &StmlWeights,
) -> Result<FeatureMap> {
    reference_enhancement_with_bias(reference, objects, w, 0.0)
}

/// Variant adding `object_logit_bias` to every logit aimed at an object key.
pub(crate) fn reference_enhancement_with_bias(
    reference: &FeatureMap,
    objects: &ObjectFeatures,
    w: &StmlWeights,
    object_logit_bias: f64,
) -> Result<FeatureMap> {
    let c = reference.channels();
    if objects.vectors.dims2()?.1 != c {
        return Err(StmaError::dim("reference_object_enhancement", reference.tokens.shape(), objects.vectors.shape()));
    }
    check_weights(w, c)?;
    let (len, n) = (reference.len(), objects.count());
    let mut tape = Tape::new();
    let wv = WeightVars::record(&mut tape, w, false);
    let r = tape.constant(reference.tokens.clone());
    let o = tape.constant(objects.vectors.clone());
    let rp = project(&mut tape, r, &wv)?;
    let op = project(&mut tape, o, &wv)?;
    let bias = (object_logit_bias != 0.0).then(|| {
        tape.constant(Tensor::from_fn(&[len, len + n], |i| if i % (len + n) >= len { object_logit_bias } else { 0.0 }))
    });
    let out = reference_stream(&mut tape, &rp, Some(&op), &wv, bias)?;
    FeatureMap::new(tape.value(out)?.clone(), reference.grid_h, reference.grid_w)
}

/// Queries from `test`; keys/values from `[test; ref_1; …; ref_m]`. An empty
/// reference list is plain self-attention of the test map.
pub fn test_reference_correlation(test: &FeatureMap, references: &[FeatureMap], w: &StmlWeights) -> Result<FeatureMap> {
    let c = test.channels();
    for r in references {
        if r.tokens.shape() != test.tokens.shape() {
            return Err(StmaError::dim("test_reference_correlation", test.tokens.shape(), r.tokens.shape()));
        }
    }
    check_weights(w, c)?;
    let mut tape = Tape::new();
    let wv = WeightVars::record(&mut tape, w, false);
    let t = tape.constant(test.tokens.clone());
    let tp = project(&mut tape, t, &wv)?;
    let mut rps = Vec::with_capacity(references.len());
    for r in references {
        let rv = tape.constant(r.tokens.clone());
        rps.push(project(&mut tape, rv, &wv)?);
    }
    let out = test_stream(&mut tape, &tp, &rps, &wv)?;
    FeatureMap::new(tape.value(out)?.clone(), test.grid_h, test.grid_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{seeded_rng, uniform};
    use crate::oracle::{masked_attention_rows, rows_of};
    use crate::stml::{joint_attention_oracle, Visibility};
    use crate::tensor::ops;

    fn fmap(rng: &mut crate::init::SeededRng, n: usize, c: usize) -> FeatureMap {
        let gw = if n.is_multiple_of(2) { 2 } else { 1 };
        FeatureMap::new(uniform(rng, &[n, c], -1.0, 1.0), n / gw, gw).unwrap()
    }

    fn state(seed: u64, n_tok: usize, c: usize, m: usize, n_obj: usize) -> StmlState {
        let mut rng = seeded_rng(seed);
        StmlState {
            test: fmap(&mut rng, n_tok, c),
            references: (0..m).map(|_| fmap(&mut rng, n_tok, c)).collect(),
            objects: ObjectFeatures::new(uniform(&mut rng, &[n_obj, c], -1.0, 1.0)).unwrap(),
        }
    }

    /// Generic multi-head self-attention on a plain matrix.
    fn generic_mha(x: &Tensor, w: &StmlWeights) -> Tensor {
        let q = ops::matmul(x, &w.w_q).unwrap();
        let k = ops::matmul(x, &w.w_k).unwrap();
        let v = ops::matmul(x, &w.w_v).unwrap();
        let d = w.head_dim();
        let mut heads = Vec::new();
        for h in 0..w.heads {
            let s = |t: &Tensor| rows_of(&ops::slice_cols(t, h * d, (h + 1) * d).unwrap());
            let out = masked_attention_rows(&s(&q), &s(&k), &s(&v), 1.0 / (d as f64).sqrt(), |_, _| true);
            heads.push(Tensor::from_rows(&out).unwrap());
        }
        let refs: Vec<&Tensor> = heads.iter().collect();
        ops::matmul(&ops::concat_cols(&refs).unwrap(), &w.w_o).unwrap()
    }

    #[test]
    fn single_object_attends_to_itself() {
        let mut rng = seeded_rng(1);
        let w = StmlWeights::random(&mut rng, 8, 2).unwrap();
        let o = ObjectFeatures::new(uniform(&mut rng, &[1, 8], -1.0, 1.0)).unwrap();
        let out = object_self_attention(&o, &w).unwrap();
        let expected = ops::matmul(&ops::matmul(&o.vectors, &w.w_v).unwrap(), &w.w_o).unwrap();
        assert!(out.vectors.max_abs_diff(&expected).unwrap() < 1e-14);
    }

    #[test]
    fn identical_objects_give_identical_rows() {
        let mut rng = seeded_rng(2);
        let w = StmlWeights::random(&mut rng, 8, 2).unwrap();
        let row = uniform(&mut rng, &[1, 8], -1.0, 1.0);
        let other = uniform(&mut rng, &[1, 8], -1.0, 1.0);
        let o = ObjectFeatures::new(ops::concat_rows(&[&row, &other, &row]).unwrap()).unwrap();
        let out = object_self_attention(&o, &w).unwrap();
        assert_eq!(out.vectors.row(0), out.vectors.row(2));
    }

    #[test]
    fn object_attention_matches_generic_mha() {
        let mut rng = seeded_rng(3);
        let w = StmlWeights::random(&mut rng, 12, 3).unwrap();
        let o = ObjectFeatures::new(uniform(&mut rng, &[3, 12], -1.0, 1.0)).unwrap();
        let out = object_self_attention(&o, &w).unwrap();
        assert!(out.vectors.max_abs_diff(&generic_mha(&o.vectors, &w)).unwrap() < 1e-10);
    }

    #[test]
    fn masked_objects_collapse_to_reference_self_attention() {
        let s = state(4, 4, 8, 1, 2);
        let w = StmlWeights::random(&mut seeded_rng(5), 8, 2).unwrap();
        let masked = reference_enhancement_with_bias(&s.references[0], &s.objects, &w, f64::NEG_INFINITY).unwrap();
        let plain = generic_mha(&s.references[0].tokens, &w);
        assert!(masked.tokens.max_abs_diff(&plain).unwrap() < 1e-12);
    }

    #[test]
    fn equal_logits_average_values() {
        let c = 4;
        let mut w = StmlWeights::random(&mut seeded_rng(6), c, 1).unwrap();
        w.w_q = Tensor::zeros(&[c, c]);
        w.w_v = Tensor::identity(c);
        w.w_o = Tensor::identity(c);
        let r = FeatureMap::new(Tensor::new(vec![1, c], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), 1, 1).unwrap();
        let o = ObjectFeatures::new(Tensor::new(vec![1, c], vec![3.0, 0.0, 1.0, 0.0]).unwrap()).unwrap();
        let out = reference_object_enhancement(&r, &o, &w).unwrap();
        assert_eq!(out.tokens.data(), &[2.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn reference_enhancement_matches_masked_joint_attention() {
        let s = state(7, 4, 8, 1, 2);
        let w = StmlWeights::random(&mut seeded_rng(8), 8, 2).unwrap();
        let got = reference_object_enhancement(&s.references[0], &s.objects, &w).unwrap();
        // rows [ref; objects]; only ref rows are queried
        let x = ops::concat_rows(&[&s.references[0].tokens, &s.objects.vectors]).unwrap();
        let joint = generic_mha(&x, &w);
        let expected = ops::slice_rows(&joint, 0, 4).unwrap();
        assert!(got.tokens.max_abs_diff(&expected).unwrap() < 1e-10);
    }

    #[test]
    fn empty_references_is_self_attention() {
        let s = state(9, 4, 8, 0, 1);
        let w = StmlWeights::random(&mut seeded_rng(10), 8, 4).unwrap();
        let got = test_reference_correlation(&s.test, &[], &w).unwrap();
        assert!(got.tokens.max_abs_diff(&generic_mha(&s.test.tokens, &w)).unwrap() < 1e-12);
    }

    #[test]
    fn duplicated_reference_equals_duplicated_keys() {
        let s = state(11, 4, 8, 0, 1);
        let w = StmlWeights::random(&mut seeded_rng(12), 8, 2).unwrap();
        let got = test_reference_correlation(&s.test, std::slice::from_ref(&s.test), &w).unwrap();
        // duplicating every key scales each logit's weight by 2 in numerator and denominator
        let single = test_reference_correlation(&s.test, &[], &w).unwrap();
        assert!(got.tokens.max_abs_diff(&single.tokens).unwrap() < 1e-12);
    }

    #[test]
    fn test_correlation_matches_masked_joint_attention() {
        let s = state(13, 4, 8, 2, 1);
        let w = StmlWeights::random(&mut seeded_rng(14), 8, 2).unwrap();
        let got = test_reference_correlation(&s.test, &s.references, &w).unwrap();
        let x = ops::concat_rows(&[&s.test.tokens, &s.references[0].tokens, &s.references[1].tokens]).unwrap();
        let expected = ops::slice_rows(&generic_mha(&x, &w), 0, 4).unwrap();
        assert!(got.tokens.max_abs_diff(&expected).unwrap() < 1e-10);
    }

    #[test]
    fn zero_output_weights_pass_state_through() {
        let s = state(15, 4, 8, 2, 2);
        let w = StmlWeights::passthrough(8, 2).unwrap();
        for mode in [AttentionMode::Full, AttentionMode::NoObject, AttentionMode::NoSpatial, AttentionMode::Joint] {
            assert_eq!(stml_block(&s, &w, mode).unwrap(), s, "{mode}");
        }
    }

    #[test]
    fn block_equals_manual_composition_bit_exactly() {
        let s = state(16, 4, 8, 2, 2);
        let w = StmlWeights::random(&mut seeded_rng(17), 8, 2).unwrap();
        let out = stml_block(&s, &w, AttentionMode::Full).unwrap();

        let ln = |t: &Tensor| w.ln_attn.apply(t).unwrap();
        let finish = |x: &Tensor, a: &Tensor| {
            let mid = ops::add(x, a).unwrap();
            let f = w.feed_forward(&w.ln_ffn.apply(&mid).unwrap()).unwrap();
            ops::add(&mid, &f).unwrap()
        };
        let grid = |t: &Tensor| FeatureMap::new(ln(t), 2, 2).unwrap();
        let objs_n = ObjectFeatures::new(ln(&s.objects.vectors)).unwrap();
        let obj_a = object_self_attention(&objs_n, &w).unwrap();
        assert_eq!(out.objects.vectors, finish(&s.objects.vectors, &obj_a.vectors));

        let refs_n: Vec<FeatureMap> = s.references.iter().map(|r| grid(&r.tokens)).collect();
        for (i, r) in s.references.iter().enumerate() {
            let a = reference_object_enhancement(&refs_n[i], &objs_n, &w).unwrap();
            assert_eq!(out.references[i].tokens, finish(&r.tokens, &a.tokens));
        }
        let a = test_reference_correlation(&grid(&s.test.tokens), &refs_n, &w).unwrap();
        assert_eq!(out.test.tokens, finish(&s.test.tokens, &a.tokens));
    }

    #[test]
    fn no_object_mode_matches_masking_oracle() {
        let s = state(18, 4, 8, 2, 2);
        let w = StmlWeights::random(&mut seeded_rng(19), 8, 2).unwrap();
        let out = stml_block(&s, &w, AttentionMode::NoObject).unwrap();
        let oracle = joint_attention_oracle(&s, &w, &Visibility::without_objects(2, 2, 4)).unwrap();
        assert!(out.test.tokens.max_abs_diff(&oracle.test.tokens).unwrap() < 1e-10);
        for (a, b) in out.references.iter().zip(&oracle.references) {
            assert!(a.tokens.max_abs_diff(&b.tokens).unwrap() < 1e-10);
        }
        assert_eq!(out.objects, s.objects);
    }

    #[test]
    fn joint_mode_requires_references() {
        let s = state(20, 4, 8, 0, 2);
        let w = StmlWeights::random(&mut seeded_rng(21), 8, 2).unwrap();
        assert!(matches!(stml_block(&s, &w, AttentionMode::Joint), Err(StmaError::Contract(_))));
    }

    #[test]
    fn frozen_objects_are_returned_unchanged() {
        let s = state(22, 4, 8, 1, 2);
        let w = StmlWeights::random(&mut seeded_rng(23), 8, 2).unwrap();
        let cfg = BlockConfig { mode: AttentionMode::Full, update_objects: false };
        let frozen = stml_block(&s, &w, cfg).unwrap();
        let updated = stml_block(&s, &w, AttentionMode::Full).unwrap();
        assert_eq!(frozen.objects, s.objects);
        // objects still act as keys for the references
        assert_eq!(frozen.references, updated.references);
    }

    #[test]
    fn forward_composes_blocks() {
        let s = state(24, 4, 8, 2, 2);
        let mut rng = seeded_rng(25);
        let ws = vec![StmlWeights::random(&mut rng, 8, 2).unwrap(), StmlWeights::random(&mut rng, 8, 2).unwrap()];
        let twice =
            stml_block(&stml_block(&s, &ws[0], AttentionMode::Full).unwrap(), &ws[1], AttentionMode::Full).unwrap();
        assert_eq!(stml_forward(&s, &ws, AttentionMode::Full).unwrap(), twice);
        assert!(stml_forward(&s, &[], AttentionMode::Full).is_err());
    }
}
