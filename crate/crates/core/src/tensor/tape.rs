use std::sync::atomic::{AtomicU64, Ordering};

use super::{ops, Tensor};
use crate::error::{Result, StmaError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    Transpose(usize),
    Softmax(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize, eps: f64 },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Log(usize),
    ClampMin(usize, f64),
    Sum(usize),
    Mean(usize),
    AddRowBias(usize, usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of primitive operations for reverse-mode gradients.
///
/// Every recorded value has exactly one producing entry; `backward` walks the
/// entries in reverse recording order. One tape serves one evaluation.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every leaf of a tape.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    leaves: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `leaf`; unreached leaves yield zeros.
    pub fn get(&self, leaf: Var) -> Result<&Tensor> {
        if leaf.tape != self.tape || leaf.index >= self.leaves.len() {
            return Err(StmaError::UnknownLeaf { index: leaf.index });
        }
        self.leaves[leaf.index].as_ref().ok_or(StmaError::UnknownLeaf { index: leaf.index })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var { tape: self.id, index: self.nodes.len() - 1 }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(StmaError::UnknownLeaf { index: v.index });
        }
        Ok(v.index)
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records an input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        let out = ops::matmul(self.val(a), self.val(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let a = self.idx(a)?;
        let out = ops::transpose(self.val(a))?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let a = self.idx(a)?;
        let out = ops::softmax_rows(self.val(a))?;
        Ok(self.push(out, Op::Softmax(a)))
    }

    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (x, gamma, beta) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let out = ops::layernorm(self.val(x), self.val(gamma), self.val(beta), eps)?;
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta, eps }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        let out = ops::add(self.val(a), self.val(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        let out = ops::sub(self.val(a), self.val(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        let out = ops::mul(self.val(a), self.val(b))?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        let out = ops::div(self.val(a), self.val(b))?;
        Ok(self.push(out, Op::Div(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let a = self.idx(a)?;
        let out = ops::scale(self.val(a), s);
        Ok(self.push(out, Op::Scale(a, s)))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let a = self.idx(a)?;
        let out = ops::add_scalar(self.val(a), s);
        Ok(self.push(out, Op::AddScalar(a)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let a = self.idx(a)?;
        let out = ops::relu(self.val(a));
        Ok(self.push(out, Op::Relu(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let a = self.idx(a)?;
        let out = ops::sigmoid(self.val(a));
        Ok(self.push(out, Op::Sigmoid(a)))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let a = self.idx(a)?;
        let out = ops::log(self.val(a))?;
        Ok(self.push(out, Op::Log(a)))
    }

    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        let a = self.idx(a)?;
        let out = ops::clamp_min(self.val(a), floor);
        Ok(self.push(out, Op::ClampMin(a, floor)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let a = self.idx(a)?;
        let out = ops::sum(self.val(a));
        Ok(self.push(out, Op::Sum(a)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let a = self.idx(a)?;
        let out = ops::mean(self.val(a));
        Ok(self.push(out, Op::Mean(a)))
    }

    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (x, bias) = (self.idx(x)?, self.idx(bias)?);
        let out = ops::add_row_bias(self.val(x), self.val(bias))?;
        Ok(self.push(out, Op::AddRowBias(x, bias)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts.iter().map(|&p| self.idx(p)).collect::<Result<Vec<_>>>()?;
        let vals: Vec<&Tensor> = ids.iter().map(|&i| self.val(i)).collect();
        let out = ops::concat_rows(&vals)?;
        Ok(self.push(out, Op::ConcatRows(ids)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts.iter().map(|&p| self.idx(p)).collect::<Result<Vec<_>>>()?;
        let vals: Vec<&Tensor> = ids.iter().map(|&i| self.val(i)).collect();
        let out = ops::concat_cols(&vals)?;
        Ok(self.push(out, Op::ConcatCols(ids)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let a = self.idx(a)?;
        let out = ops::slice_rows(self.val(a), start, end)?;
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let a = self.idx(a)?;
        let out = ops::slice_cols(self.val(a), start, end)?;
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    /// Reverse sweep from a scalar `loss`, returning gradients for every leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.idx(loss)?;
        if !self.val(root).is_scalar() {
            return Err(StmaError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.val(root).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root + 1];
        adj[root] = Some(Tensor::full(self.val(root).shape(), 1.0));

        for i in (0..=root).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    adj[i] = Some(g);
                    continue;
                }
                Op::Constant => {}
                Op::MatMul(a, b) => {
                    let da = ops::matmul(&g, &ops::transpose(self.val(*b))?)?;
                    let db = ops::matmul(&ops::transpose(self.val(*a))?, &g)?;
                    accumulate(&mut adj, *a, da)?;
                    accumulate(&mut adj, *b, db)?;
                }
                Op::Transpose(a) => accumulate(&mut adj, *a, ops::transpose(&g)?)?,
                Op::Softmax(a) => {
                    let y = &node.value;
                    let (m, n) = y.dims2()?;
                    let mut dx = vec![0.0; m * n];
                    for r in 0..m {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            dx[r * n + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut adj, *a, Tensor::new(vec![m, n], dx)?)?;
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let (xhat, inv_std) = ops::normalize_rows(self.val(*x), *eps)?;
                    let gam = self.val(*gamma).data();
                    let c = gam.len();
                    let rows = xhat.numel() / c;
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    let mut dx = vec![0.0; xhat.numel()];
                    for r in 0..rows {
                        let xr = &xhat.data()[r * c..(r + 1) * c];
                        let gr = &g.data()[r * c..(r + 1) * c];
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for k in 0..c {
                            dgamma[k] += gr[k] * xr[k];
                            dbeta[k] += gr[k];
                            let d = gr[k] * gam[k];
                            mean_d += d;
                            mean_dx += d * xr[k];
                        }
                        mean_d /= c as f64;
                        mean_dx /= c as f64;
                        for k in 0..c {
                            let d = gr[k] * gam[k];
                            dx[r * c + k] = inv_std[r] * (d - mean_d - xr[k] * mean_dx);
                        }
                    }
                    let gshape = self.val(*gamma).shape().to_vec();
                    let bshape = self.val(*beta).shape().to_vec();
                    accumulate(&mut adj, *x, Tensor::new(xhat.shape().to_vec(), dx)?)?;
                    accumulate(&mut adj, *gamma, Tensor::new(gshape, dgamma)?)?;
                    accumulate(&mut adj, *beta, Tensor::new(bshape, dbeta)?)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone())?;
                    accumulate(&mut adj, *b, g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, ops::scale(&g, -1.0))?;
                    accumulate(&mut adj, *a, g)?;
                }
                Op::Mul(a, b) => {
                    accumulate(&mut adj, *a, ops::mul(&g, self.val(*b))?)?;
                    accumulate(&mut adj, *b, ops::mul(&g, self.val(*a))?)?;
                }
                Op::Div(a, b) => {
                    let bv = self.val(*b);
                    let da = ops::div(&g, bv)?;
                    let db = Tensor::from_fn(bv.shape(), |k| -g.data()[k] * node.value.data()[k] / bv.data()[k]);
                    accumulate(&mut adj, *a, da)?;
                    accumulate(&mut adj, *b, db)?;
                }
                Op::Scale(a, s) => accumulate(&mut adj, *a, ops::scale(&g, *s))?,
                Op::AddScalar(a) => accumulate(&mut adj, *a, g)?,
                Op::Relu(a) => {
                    let x = self.val(*a);
                    let d = Tensor::from_fn(x.shape(), |k| if x.data()[k] > 0.0 { g.data()[k] } else { 0.0 });
                    accumulate(&mut adj, *a, d)?;
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let d = Tensor::from_fn(y.shape(), |k| {
                        let s = y.data()[k];
                        g.data()[k] * s * (1.0 - s)
                    });
                    accumulate(&mut adj, *a, d)?;
                }
                Op::Log(a) => accumulate(&mut adj, *a, ops::div(&g, self.val(*a))?)?,
                Op::ClampMin(a, floor) => {
                    let x = self.val(*a);
                    let d = Tensor::from_fn(x.shape(), |k| if x.data()[k] > *floor { g.data()[k] } else { 0.0 });
                    accumulate(&mut adj, *a, d)?;
                }
                Op::Sum(a) => {
                    let d = Tensor::full(self.val(*a).shape(), g.item()?);
                    accumulate(&mut adj, *a, d)?;
                }
                Op::Mean(a) => {
                    let x = self.val(*a);
                    let d = Tensor::full(x.shape(), g.item()? / x.numel() as f64);
                    accumulate(&mut adj, *a, d)?;
                }
                Op::AddRowBias(x, bias) => {
                    let (_, n) = g.dims2()?;
                    let mut db = vec![0.0; n];
                    for (k, v) in g.data().iter().enumerate() {
                        db[k % n] += v;
                    }
                    let bshape = self.val(*bias).shape().to_vec();
                    accumulate(&mut adj, *bias, Tensor::new(bshape, db)?)?;
                    accumulate(&mut adj, *x, g)?;
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let (r, _) = self.val(p).dims2()?;
                        accumulate(&mut adj, p, ops::slice_rows(&g, start, start + r)?)?;
                        start += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let (_, c) = self.val(p).dims2()?;
                        accumulate(&mut adj, p, ops::slice_cols(&g, start, start + c)?)?;
                        start += c;
                    }
                }
                Op::SliceRows(a, start) => {
                    let (m, n) = self.val(*a).dims2()?;
                    let mut d = vec![0.0; m * n];
                    d[start * n..start * n + g.numel()].copy_from_slice(g.data());
                    accumulate(&mut adj, *a, Tensor::new(vec![m, n], d)?)?;
                }
                Op::SliceCols(a, start) => {
                    let (m, n) = self.val(*a).dims2()?;
                    let (_, w) = g.dims2()?;
                    let mut d = vec![0.0; m * n];
                    for r in 0..m {
                        d[r * n + start..r * n + start + w].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut adj, *a, Tensor::new(vec![m, n], d)?)?;
                }
            }
        }

        let leaves = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| match node.op {
                Op::Leaf => {
                    Some(adj.get_mut(i).and_then(Option::take).unwrap_or_else(|| Tensor::zeros(node.value.shape())))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { tape: self.id, leaves })
    }
}

fn accumulate(adj: &mut [Option<Tensor>], index: usize, grad: Tensor) -> Result<()> {
    match &mut adj[index] {
        Some(existing) => *existing = ops::add(existing, &grad)?,
        slot @ None => *slot = Some(grad),
    }
    Ok(())
}
