//! Value-level primitives. Every function here is deterministic: loops run in
//! a fixed order, so identical inputs give bit-identical outputs.

use super::Tensor;
use crate::error::{Result, StmaError};

/// Standard matrix product `a[M×K] · b[K×N]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(StmaError::dim("matmul", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = a.dims2()?;
    let d = a.data();
    Ok(Tensor::from_fn(&[n, m], |idx| {
        let (j, i) = (idx / m, idx % m);
        d[i * n + j]
    }))
}

/// Row-wise softmax with per-row max subtraction.
///
/// Entries equal to `-inf` receive exactly zero weight; a row must contain at
/// least one finite entry.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (m, n) = x.dims2()?;
    let mut out = x.data().to_vec();
    for r in 0..m {
        let row = &mut out[r * n..(r + 1) * n];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(StmaError::contract(format!("softmax row {r} has no finite entry")));
        }
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Normalized rows and per-row `1/σ` for layer normalization over the last axis.
pub(crate) fn normalize_rows(x: &Tensor, eps: f64) -> Result<(Tensor, Vec<f64>)> {
    let c = *x.shape().last().ok_or_else(|| StmaError::contract("layernorm needs rank ≥ 1"))?;
    let rows = x.numel() / c;
    let mut out = x.data().to_vec();
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &mut out[r * c..(r + 1) * c];
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let is = 1.0 / (var + eps).sqrt();
        if !is.is_finite() {
            return Err(StmaError::contract("layernorm on a constant row needs eps > 0"));
        }
        for v in row.iter_mut() {
            *v = (*v - mean) * is;
        }
        inv_std.push(is);
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, inv_std))
}

/// Layer normalization over the last axis followed by `gamma`/`beta` affine.
pub fn layernorm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let c = *x.shape().last().unwrap_or(&0);
    if gamma.numel() != c {
        return Err(StmaError::dim("layernorm", x.shape(), gamma.shape()));
    }
    if beta.numel() != c {
        return Err(StmaError::dim("layernorm", x.shape(), beta.shape()));
    }
    let (mut xhat, _) = normalize_rows(x, eps)?;
    let (g, b) = (gamma.data(), beta.data());
    for (i, v) in xhat.data_mut().iter_mut().enumerate() {
        *v = *v * g[i % c] + b[i % c];
    }
    Ok(xhat)
}

fn zip_with(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(StmaError::dim(op, a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("sub", a, b, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_with("mul", a, b, |x, y| x * y)
}

pub fn div(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if b.data().contains(&0.0) {
        return Err(StmaError::contract("division by zero"));
    }
    zip_with("div", a, b, |x, y| x / y)
}

pub fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_fn(a.shape(), |i| f(a.data()[i]))
}

pub fn scale(a: &Tensor, s: f64) -> Tensor {
    map(a, |v| v * s)
}

pub fn add_scalar(a: &Tensor, s: f64) -> Tensor {
    map(a, |v| v + s)
}

pub fn relu(a: &Tensor) -> Tensor {
    map(a, |v| v.max(0.0))
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    map(a, sigmoid_scalar)
}

pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Natural logarithm; every entry must be strictly positive.
pub fn log(a: &Tensor) -> Result<Tensor> {
    if a.data().iter().any(|&v| v <= 0.0) {
        return Err(StmaError::contract("log of a non-positive value"));
    }
    Ok(map(a, f64::ln))
}

pub fn clamp_min(a: &Tensor, floor: f64) -> Tensor {
    map(a, |v| v.max(floor))
}

pub fn sum(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data().iter().sum())
}

pub fn mean(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data().iter().sum::<f64>() / a.numel() as f64)
}

/// Adds `bias[N]` to every row of `x[M×N]`.
pub fn add_row_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (_, n) = x.dims2()?;
    if bias.numel() != n {
        return Err(StmaError::dim("add_row_bias", x.shape(), bias.shape()));
    }
    let b = bias.data();
    Ok(Tensor::from_fn(x.shape(), |i| x.data()[i] + b[i % n]))
}

/// Vertical concatenation of matrices sharing a column count.
pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| StmaError::contract("concat of zero tensors"))?;
    let (_, n) = first.dims2()?;
    let mut rows = 0;
    let mut data = Vec::new();
    for p in parts {
        let (r, c) = p.dims2()?;
        if c != n {
            return Err(StmaError::dim("concat_rows", first.shape(), p.shape()));
        }
        rows += r;
        data.extend_from_slice(p.data());
    }
    Tensor::new(vec![rows, n], data)
}

/// Horizontal concatenation of matrices sharing a row count.
pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| StmaError::contract("concat of zero tensors"))?;
    let (m, _) = first.dims2()?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (r, c) = p.dims2()?;
        if r != m {
            return Err(StmaError::dim("concat_cols", first.shape(), p.shape()));
        }
        widths.push(c);
    }
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(m * total);
    for r in 0..m {
        for (p, &w) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
    }
    Tensor::new(vec![m, total], data)
}

pub fn slice_rows(x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let (m, n) = x.dims2()?;
    if start >= end || end > m {
        return Err(StmaError::contract(format!("row range {start}..{end} invalid for {m} rows")));
    }
    Tensor::new(vec![end - start, n], x.data()[start * n..end * n].to_vec())
}

pub fn slice_cols(x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let (m, n) = x.dims2()?;
    if start >= end || end > n {
        return Err(StmaError::contract(format!("column range {start}..{end} invalid for {n} columns")));
    }
    let w = end - start;
    let mut data = Vec::with_capacity(m * w);
    for r in 0..m {
        data.extend_from_slice(&x.data()[r * n + start..r * n + end]);
    }
    Tensor::new(vec![m, w], data)
}
