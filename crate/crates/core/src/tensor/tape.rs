//! Reverse-mode autodiff on a linear op tape.
//!
//! Forward calls record one node per primitive with whatever the backward
//! pass needs (inputs by id, and saved values like softmax outputs).
//! [`Tape::backward`] walks the record in reverse, accumulating gradients
//! into a side table, so `grad(v)` is defined for every node: zero where the
//! loss does not reach it.

use crate::error::{Error, Result};
use crate::tensor::{gelu, gelu_grad, log_softmax_at, matmul_raw, require_2d, Tensor};

/// Handle to a node on a [`Tape`]. Only valid for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// x[m,n] + row[n], broadcast over rows.
    AddRowBroadcast(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Gelu(Var),
    /// Saved: the softmax output (the node value itself).
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    /// out[i] = x[ids[i]]; scatter-add backward.
    GatherRows {
        x: Var,
        ids: Vec<usize>,
    },
    /// out is [out_rows, n] zeros with out[ids[j]] = x[j]; ids distinct.
    ScatterRows {
        x: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
        end: usize,
    },
    /// out[i, :] = x[i, :] * s[i].
    MulRowsByVec {
        x: Var,
        s: Var,
    },
    /// out[i] = x[i, ids[i]].
    SelectPerRow {
        x: Var,
        ids: Vec<usize>,
    },
    Sum(Var),
    CrossEntropyMasked {
        logits: Var,
        targets: Vec<u32>,
        mask: Vec<bool>,
        probs: Vec<f64>,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Records primitive ops in topological order; inputs always precede uses.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss w.r.t. `v`; zeros if unreachable.
    pub fn grad(&self, v: Var) -> Tensor {
        match &self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            _ => Tensor::zeros(self.nodes[v.0].value.shape()),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "sub",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Sub(a, b), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * c).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(Op::Scale(a, c), out)
    }

    /// Broadcast-add a length-n row vector to every row of x[m,n].
    pub fn add_row_broadcast(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = require_2d(self.value(x), "add_row_broadcast")?;
        let tr = self.value(row);
        if tr.shape() != [n] {
            return Err(Error::ShapeMismatch {
                op: "add_row_broadcast",
                lhs: vec![m, n],
                rhs: tr.shape().to_vec(),
            });
        }
        let mut data = self.value(x).data().to_vec();
        let rv = self.value(row).data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += rv[j];
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(Op::AddRowBroadcast(x, row), out))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = require_2d(self.value(a), "matmul")?;
        let (kb, n) = require_2d(self.value(b), "matmul")?;
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, ka],
                rhs: vec![kb, n],
            });
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, ka, n);
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = require_2d(self.value(a), "transpose")?;
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let out = Tensor::new(vec![n, m], data)?;
        Ok(self.push(Op::Transpose(a), out))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| gelu(x)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(Op::Gelu(a), out)
    }

    /// Row-stabilized softmax; rows sum to 1 within 1e-12.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = require_2d(self.value(a), "softmax_rows")?;
        let src = self.value(a).data();
        if src.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite { op: "softmax_rows" });
        }
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..n {
                let e = (row[j] - max).exp();
                data[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                data[i * n + j] /= sum;
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(Op::SoftmaxRows(a), out))
    }

    /// Per-row normalization over the last dimension, then gain/bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = require_2d(self.value(x), "layer_norm")?;
        for (name, v) in [("gain", gain), ("bias", bias)] {
            let t = self.value(v);
            if t.shape() != [n] {
                return Err(Error::ShapeMismatch {
                    op: if name == "gain" {
                        "layer_norm gain"
                    } else {
                        "layer_norm bias"
                    },
                    lhs: vec![m, n],
                    rhs: t.shape().to_vec(),
                });
            }
        }
        let src = self.value(x).data().to_vec();
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let xh = (row[j] - mean) * is;
                xhat[i * n + j] = xh;
                data[i * n + j] = xh * g[j] + b[j];
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            out,
        ))
    }

    /// Row gather: embeddings, positional lookups, token dispatch.
    pub fn gather_rows(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        let (m, n) = require_2d(self.value(x), "gather_rows")?;
        for &id in ids {
            if id >= m {
                return Err(Error::Data(format!(
                    "gather_rows: row id {id} out of range {m}"
                )));
            }
        }
        let src = self.value(x).data();
        let mut data = vec![0.0; ids.len() * n];
        for (i, &id) in ids.iter().enumerate() {
            data[i * n..(i + 1) * n].copy_from_slice(&src[id * n..(id + 1) * n]);
        }
        let out = Tensor::new(vec![ids.len(), n], data)?;
        Ok(self.push(
            Op::GatherRows {
                x,
                ids: ids.to_vec(),
            },
            out,
        ))
    }

    /// Embedding lookup by token id (gather with scatter-add backward).
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        self.gather_rows(table, &rows)
    }

    /// Place row j of x at row ids[j] of a zero [out_rows, n] matrix.
    /// ids must be distinct.
    pub fn scatter_rows(&mut self, x: Var, ids: &[usize], out_rows: usize) -> Result<Var> {
        let (m, n) = require_2d(self.value(x), "scatter_rows")?;
        if ids.len() != m {
            return Err(Error::ShapeMismatch {
                op: "scatter_rows",
                lhs: vec![m, n],
                rhs: vec![ids.len()],
            });
        }
        let src = self.value(x).data();
        let mut data = vec![0.0; out_rows * n];
        for (j, &id) in ids.iter().enumerate() {
            if id >= out_rows {
                return Err(Error::Data(format!(
                    "scatter_rows: row id {id} out of range {out_rows}"
                )));
            }
            data[id * n..(id + 1) * n].copy_from_slice(&src[j * n..(j + 1) * n]);
        }
        let out = Tensor::new(vec![out_rows, n], data)?;
        Ok(self.push(
            Op::ScatterRows {
                x,
                ids: ids.to_vec(),
            },
            out,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::DegenerateInput("concat_rows of nothing".into()));
        }
        let (_, n) = require_2d(self.value(parts[0]), "concat_rows")?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (m, np) = require_2d(self.value(p), "concat_rows")?;
            if np != n {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: vec![rows, n],
                    rhs: vec![m, np],
                });
            }
            data.extend_from_slice(self.value(p).data());
            rows += m;
        }
        let out = Tensor::new(vec![rows, n], data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::DegenerateInput("concat_cols of nothing".into()));
        }
        let (m, _) = require_2d(self.value(parts[0]), "concat_cols")?;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| require_2d(self.value(p), "concat_cols").map(|(_, n)| n))
            .collect::<Result<_>>()?;
        let n_total: usize = widths.iter().sum();
        let mut data = vec![0.0; m * n_total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let (mp, _) = require_2d(self.value(p), "concat_cols")?;
            if mp != m {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: vec![m, n_total],
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            let src = self.value(p).data();
            for i in 0..m {
                data[i * n_total + offset..i * n_total + offset + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let out = Tensor::new(vec![m, n_total], data)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = require_2d(self.value(x), "slice_cols")?;
        if start >= end || end > n {
            return Err(Error::Data(format!(
                "slice_cols: range {start}..{end} invalid for width {n}"
            )));
        }
        let w = end - start;
        let src = self.value(x).data();
        let mut data = vec![0.0; m * w];
        for i in 0..m {
            data[i * w..(i + 1) * w].copy_from_slice(&src[i * n + start..i * n + end]);
        }
        let out = Tensor::new(vec![m, w], data)?;
        Ok(self.push(Op::SliceCols { x, start, end }, out))
    }

    /// Scale row i of x by s[i]; s is a length-m vector.
    pub fn mul_rows_by_vec(&mut self, x: Var, s: Var) -> Result<Var> {
        let (m, n) = require_2d(self.value(x), "mul_rows_by_vec")?;
        let ts = self.value(s);
        if ts.shape() != [m] {
            return Err(Error::ShapeMismatch {
                op: "mul_rows_by_vec",
                lhs: vec![m, n],
                rhs: ts.shape().to_vec(),
            });
        }
        let sv = ts.data().to_vec();
        let src = self.value(x).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] = src[i * n + j] * sv[i];
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(Op::MulRowsByVec { x, s }, out))
    }

    /// out[i] = x[i, ids[i]] as a length-m vector.
    pub fn select_per_row(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        let (m, n) = require_2d(self.value(x), "select_per_row")?;
        if ids.len() != m {
            return Err(Error::ShapeMismatch {
                op: "select_per_row",
                lhs: vec![m, n],
                rhs: vec![ids.len()],
            });
        }
        let src = self.value(x).data();
        let mut data = vec![0.0; m];
        for i in 0..m {
            if ids[i] >= n {
                return Err(Error::Data(format!(
                    "select_per_row: col id {} out of range {n}",
                    ids[i]
                )));
            }
            data[i] = src[i * n + ids[i]];
        }
        let out = Tensor::new(vec![m], data)?;
        Ok(self.push(
            Op::SelectPerRow {
                x,
                ids: ids.to_vec(),
            },
            out,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total: f64 = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(total))
    }

    /// Mean over masked positions of -log softmax(logits)[target].
    pub fn cross_entropy_masked(
        &mut self,
        logits: Var,
        targets: &[u32],
        mask: &[bool],
    ) -> Result<Var> {
        let value =
            crate::tensor::cross_entropy_masked_value(self.value(logits), targets, mask)?;
        let (m, n) = require_2d(self.value(logits), "cross_entropy_masked")?;
        // Saved softmax probabilities for the backward pass.
        let src = self.value(logits).data();
        let mut probs = vec![0.0; m * n];
        for i in 0..m {
            if !mask[i] {
                continue;
            }
            let row = &src[i * n..(i + 1) * n];
            for j in 0..n {
                probs[i * n + j] = log_softmax_at(row, j).exp();
            }
        }
        Ok(self.push(
            Op::CrossEntropyMasked {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
            },
            Tensor::scalar(value),
        ))
    }

    /// Populate gradients for every node reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: self.value(loss).shape().to_vec(),
            });
        }
        let n_nodes = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n_nodes).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let upstream = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(idx, &upstream, &mut grads)?;
            grads[idx] = Some(upstream);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(
        &self,
        idx: usize,
        up: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let acc = |grads: &mut [Option<Tensor>], v: Var, delta: Tensor| {
            match &mut grads[v.0] {
                Some(g) => {
                    for (gi, di) in g.data_mut().iter_mut().zip(delta.data()) {
                        *gi += di;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };

        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(grads, *a, up.clone());
                acc(grads, *b, up.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, up.clone());
                let neg = Tensor::new(
                    up.shape().to_vec(),
                    up.data().iter().map(|v| -v).collect(),
                )?;
                acc(grads, *b, neg);
            }
            Op::Mul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let da = Tensor::new(
                    up.shape().to_vec(),
                    up.data().iter().zip(tb.data()).map(|(u, y)| u * y).collect(),
                )?;
                let db = Tensor::new(
                    up.shape().to_vec(),
                    up.data().iter().zip(ta.data()).map(|(u, x)| u * x).collect(),
                )?;
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::Scale(a, c) => {
                let da = Tensor::new(
                    up.shape().to_vec(),
                    up.data().iter().map(|u| u * c).collect(),
                )?;
                acc(grads, *a, da);
            }
            Op::AddRowBroadcast(x, row) => {
                acc(grads, *x, up.clone());
                let n = self.value(*row).numel();
                let m = up.numel() / n;
                let mut drow = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        drow[j] += up.data()[i * n + j];
                    }
                }
                acc(grads, *row, Tensor::new(vec![n], drow)?);
            }
            Op::MatMul(a, b) => {
                // dA = dC . B^T ; dB = A^T . dC
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                let mut bt = vec![0.0; n * k];
                for i in 0..k {
                    for j in 0..n {
                        bt[j * k + i] = tb.data()[i * n + j];
                    }
                }
                let da = matmul_raw(up.data(), &bt, m, n, k);
                let mut at = vec![0.0; k * m];
                for i in 0..m {
                    for j in 0..k {
                        at[j * m + i] = ta.data()[i * k + j];
                    }
                }
                let db = matmul_raw(&at, up.data(), k, m, n);
                acc(grads, *a, Tensor::new(vec![m, k], da)?);
                acc(grads, *b, Tensor::new(vec![k, n], db)?);
            }
            Op::Transpose(a) => {
                let (n, m) = (up.shape()[0], up.shape()[1]);
                let mut da = vec![0.0; m * n];
                for i in 0..n {
                    for j in 0..m {
                        da[j * n + i] = up.data()[i * m + j];
                    }
                }
                acc(grads, *a, Tensor::new(vec![m, n], da)?);
            }
            Op::Gelu(a) => {
                let ta = self.value(*a);
                let da = Tensor::new(
                    up.shape().to_vec(),
                    up.data()
                        .iter()
                        .zip(ta.data())
                        .map(|(u, &x)| u * gelu_grad(x))
                        .collect(),
                )?;
                acc(grads, *a, da);
            }
            Op::SoftmaxRows(a) => {
                // dx = y * (dy - sum(dy * y)) per row
                let y = &self.nodes[idx].value;
                let (m, n) = (y.shape()[0], y.shape()[1]);
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let yr = &y.data()[i * n..(i + 1) * n];
                    let ur = &up.data()[i * n..(i + 1) * n];
                    let dot: f64 = yr.iter().zip(ur).map(|(yv, uv)| yv * uv).sum();
                    for j in 0..n {
                        da[i * n + j] = yr[j] * (ur[j] - dot);
                    }
                }
                acc(grads, *a, Tensor::new(vec![m, n], da)?);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let tg = self.value(*gain);
                let (m, n) = (up.shape()[0], up.shape()[1]);
                let g = tg.data();
                let mut dgain = vec![0.0; n];
                let mut dbias = vec![0.0; n];
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let ur = &up.data()[i * n..(i + 1) * n];
                    let xr = &xhat[i * n..(i + 1) * n];
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..n {
                        dgain[j] += ur[j] * xr[j];
                        dbias[j] += ur[j];
                        let dxh = ur[j] * g[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xr[j];
                    }
                    mean_dxhat /= n as f64;
                    mean_dxhat_xhat /= n as f64;
                    for j in 0..n {
                        let dxh = ur[j] * g[j];
                        dx[i * n + j] = inv_std[i] * (dxh - mean_dxhat - xr[j] * mean_dxhat_xhat);
                    }
                }
                acc(grads, *x, Tensor::new(vec![m, n], dx)?);
                acc(grads, *gain, Tensor::new(vec![n], dgain)?);
                acc(grads, *bias, Tensor::new(vec![n], dbias)?);
            }
            Op::GatherRows { x, ids } => {
                let tx = self.value(*x);
                let (m, n) = (tx.shape()[0], tx.shape()[1]);
                let mut dx = vec![0.0; m * n];
                for (i, &id) in ids.iter().enumerate() {
                    for j in 0..n {
                        dx[id * n + j] += up.data()[i * n + j];
                    }
                }
                acc(grads, *x, Tensor::new(vec![m, n], dx)?);
            }
            Op::ScatterRows { x, ids } => {
                let tx = self.value(*x);
                let (m, n) = (tx.shape()[0], tx.shape()[1]);
                let mut dx = vec![0.0; m * n];
                for (j, &id) in ids.iter().enumerate() {
                    dx[j * n..(j + 1) * n].copy_from_slice(&up.data()[id * n..(id + 1) * n]);
                }
                acc(grads, *x, Tensor::new(vec![m, n], dx)?);
            }
            Op::ConcatRows(parts) => {
                let n = up.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).shape()[0];
                    let slice = up.data()[offset * n..(offset + rows) * n].to_vec();
                    acc(grads, p, Tensor::new(vec![rows, n], slice)?);
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let (m, n_total) = (up.shape()[0], up.shape()[1]);
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    let mut dp = vec![0.0; m * w];
                    for i in 0..m {
                        dp[i * w..(i + 1) * w].copy_from_slice(
                            &up.data()[i * n_total + offset..i * n_total + offset + w],
                        );
                    }
                    acc(grads, p, Tensor::new(vec![m, w], dp)?);
                    offset += w;
                }
            }
            Op::SliceCols { x, start, end } => {
                let tx = self.value(*x);
                let (m, n) = (tx.shape()[0], tx.shape()[1]);
                let w = end - start;
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    dx[i * n + start..i * n + end].copy_from_slice(&up.data()[i * w..(i + 1) * w]);
                }
                acc(grads, *x, Tensor::new(vec![m, n], dx)?);
            }
            Op::MulRowsByVec { x, s } => {
                let tx = self.value(*x);
                let ts = self.value(*s);
                let (m, n) = (tx.shape()[0], tx.shape()[1]);
                let mut dx = vec![0.0; m * n];
                let mut ds = vec![0.0; m];
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = up.data()[i * n + j] * ts.data()[i];
                        ds[i] += up.data()[i * n + j] * tx.data()[i * n + j];
                    }
                }
                acc(grads, *x, Tensor::new(vec![m, n], dx)?);
                acc(grads, *s, Tensor::new(vec![m], ds)?);
            }
            Op::SelectPerRow { x, ids } => {
                let tx = self.value(*x);
                let (m, n) = (tx.shape()[0], tx.shape()[1]);
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    dx[i * n + ids[i]] = up.data()[i];
                }
                acc(grads, *x, Tensor::new(vec![m, n], dx)?);
            }
            Op::Sum(a) => {
                let ta = self.value(*a);
                let g = up.scalar_value();
                acc(grads, *a, Tensor::full(ta.shape(), g));
            }
            Op::CrossEntropyMasked {
                logits,
                targets,
                mask,
                probs,
            } => {
                let tl = self.value(*logits);
                let (m, n) = (tl.shape()[0], tl.shape()[1]);
                let n_masked = mask.iter().filter(|b| **b).count() as f64;
                let g = up.scalar_value() / n_masked;
                let mut dl = vec![0.0; m * n];
                for i in 0..m {
                    if !mask[i] {
                        continue;
                    }
                    for j in 0..n {
                        let indicator = if j == targets[i] as usize { 1.0 } else { 0.0 };
                        dl[i * n + j] = g * (probs[i * n + j] - indicator);
                    }
                }
                acc(grads, *logits, Tensor::new(vec![m, n], dl)?);
            }
        }
        Ok(())
    }
}
