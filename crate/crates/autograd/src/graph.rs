//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only arena of nodes. Every operation pushes a new
//! node whose inputs precede it, so reverse insertion order is a valid
//! topological order for the backward sweep. Graphs are cheap to build and are
//! meant to live for a single forward/backward pass; independent graphs can be
//! built on different threads over the same read-only [`ParamStore`].

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamStore};
use crate::tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};

const LAYER_NORM_EPS: f64 = 1e-5;
const NORM_FLOOR: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Reshape(Var),
    MeanRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    Gelu(Var),
    Relu(Var),
    L2Normalize {
        x: Var,
        norms: Vec<f64>,
    },
    GatherRows {
        table: Var,
        index: Vec<usize>,
    },
    ScatterRows {
        src: Var,
        index: Vec<usize>,
    },
    Aggregate {
        x: Var,
        adj: Tensor,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Sum(..) => "sum",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::Reshape(..) => "reshape",
            Op::MeanRows(..) => "mean_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Gelu(..) => "gelu",
            Op::Relu(..) => "relu",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::GatherRows { .. } => "gather_rows",
            Op::ScatterRows { .. } => "scatter_rows",
            Op::Aggregate { .. } => "aggregate",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
    bound: BTreeMap<String, Var>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A graph that records backward information.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            bound: BTreeMap::new(),
        }
    }

    /// A forward-only graph: parameters are bound as constants and no
    /// backward records are kept.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// A differentiable leaf (only tracked when the graph records gradients).
    pub fn variable(&mut self, value: Tensor) -> Var {
        let rg = self.grad_enabled;
        self.leaf(value, rg)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a named parameter as a leaf; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, path: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(path) {
            return Ok(v);
        }
        let value = store.value(path)?.clone();
        let v = self.variable(value);
        self.bound.insert(path.to_string(), v);
        Ok(v)
    }

    /// Gradients of every bound parameter; unreachable parameters get zeros.
    pub fn param_grads(&self) -> Gradients {
        self.bound
            .iter()
            .map(|(path, &v)| {
                let node = &self.nodes[v.0];
                let grad = match &node.grad {
                    Some(g) => Tensor::new(node.value.shape().to_vec(), g.clone())
                        .expect("gradient matches value shape"),
                    None => Tensor::zeros(node.value.shape().to_vec()),
                };
                (path.clone(), grad)
            })
            .collect()
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.bound.iter().map(|(k, &v)| (k.as_str(), v))
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = &self.nodes[a.0].value;
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a row vector (`[n]` or `[1, n]`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.value(row).len() != n {
            return Err(Error::shape("add_row", self.shape(a), self.shape(row)));
        }
        let mut value = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..m {
            for (x, &b) in value.data_mut()[i * n..(i + 1) * n].iter_mut().zip(&r) {
                *x += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row), &[a, row]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.map(a, |x| x * c);
        self.push(value, Op::Scale(a, c), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 || self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let data = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::matrix(m, n, data)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 2 {
            return Err(Error::shape("transpose", self.shape(a), &[0, 0]));
        }
        let (m, n) = self.dims(a);
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let value = Tensor::matrix(n, m, data)?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    /// Sum of all entries as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_cols of nothing".into()))?;
        let m = self.dims(first).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.dims(p);
            if pm != m {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; m * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..m {
                data[i * total + offset..i * total + offset + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let value = Tensor::matrix(m, total, data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_rows of nothing".into()))?;
        let n = self.dims(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (pm, pn) = self.dims(p);
            if pn != n {
                return Err(Error::shape("concat_rows", self.shape(first), self.shape(p)));
            }
            data.extend_from_slice(self.value(p).data());
            rows += pm;
        }
        let value = Tensor::matrix(rows, n, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start > end || end > n {
            return Err(Error::shape("slice_cols", self.shape(a), &[start, end]));
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let value = Tensor::matrix(m, w, data)?;
        Ok(self.push(value, Op::SliceCols(a, start), &[a]))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start > end || end > m {
            return Err(Error::shape("slice_rows", self.shape(a), &[start, end]));
        }
        let data = self.value(a).data()[start * n..end * n].to_vec();
        let value = Tensor::matrix(end - start, n, data)?;
        Ok(self.push(value, Op::SliceRows(a, start), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Mean over rows, giving `[1, n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if m == 0 {
            return Err(Error::InvalidArgument("mean_rows of an empty matrix".into()));
        }
        let src = self.value(a).data();
        let mut data = vec![0.0; n];
        for i in 0..m {
            for (d, &x) in data.iter_mut().zip(&src[i * n..(i + 1) * n]) {
                *d += x;
            }
        }
        let inv = 1.0 / m as f64;
        data.iter_mut().for_each(|d| *d *= inv);
        let value = Tensor::matrix(1, n, data)?;
        Ok(self.push(value, Op::MeanRows(a), &[a]))
    }

    /// Row-wise layer normalization with affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mu) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let value = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(value, Op::Softmax(a), &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let value = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(value, Op::LogSoftmax(a), &[a])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.map(a, |x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        self.push(value, Op::Gelu(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.map(a, |x| x.max(0.0));
        self.push(value, Op::Relu(a), &[a])
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let (m, n) = self.dims(x);
        let mut data = self.value(x).data().to_vec();
        let mut norms = vec![0.0; m];
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
            norms[i] = norm;
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        self.push(value, Op::L2Normalize { x, norms }, &[x])
    }

    /// Embedding lookup: row `index[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(table);
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(index.len() * n);
        for &r in index {
            if r >= m {
                return Err(Error::IndexOutOfRange {
                    op: "gather_rows",
                    index: r,
                    len: m,
                });
            }
            data.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        let value = Tensor::matrix(index.len(), n, data)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                table,
                index: index.to_vec(),
            },
            &[table],
        ))
    }

    /// Places row `i` of `src` at row `index[i]` of a zero `[rows, n]` matrix.
    /// Indices must be distinct.
    pub fn scatter_rows(&mut self, src: Var, index: &[usize], rows: usize) -> Result<Var> {
        let (m, n) = self.dims(src);
        if m != index.len() {
            return Err(Error::shape("scatter_rows", self.shape(src), &[index.len()]));
        }
        let mut seen = vec![false; rows];
        let s = self.value(src).data();
        let mut data = vec![0.0; rows * n];
        for (i, &r) in index.iter().enumerate() {
            if r >= rows || seen[r] {
                return Err(Error::IndexOutOfRange {
                    op: "scatter_rows",
                    index: r,
                    len: rows,
                });
            }
            seen[r] = true;
            data[r * n..(r + 1) * n].copy_from_slice(&s[i * n..(i + 1) * n]);
        }
        let value = Tensor::matrix(rows, n, data)?;
        Ok(self.push(
            value,
            Op::ScatterRows {
                src,
                index: index.to_vec(),
            },
            &[src],
        ))
    }

    /// Graph aggregation over blocks of joints: `x` is `[B * j, c]` holding `B`
    /// consecutive blocks of `j` joints, and every block is left-multiplied by
    /// the constant `[j, j]` adjacency.
    pub fn aggregate(&mut self, adj: &Tensor, x: Var) -> Result<Var> {
        let (rows, c) = self.dims(x);
        let j = adj.rows();
        if adj.cols() != j || j == 0 || rows % j != 0 {
            return Err(Error::shape("aggregate", adj.shape(), self.shape(x)));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows * c);
        for block in 0..rows / j {
            let xb = &src[block * j * c..(block + 1) * j * c];
            data.extend(matmul(adj.data(), xb, j, j, c));
        }
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(value, Op::Aggregate { x, adj: adj.clone() }, &[x]))
    }

    /// Linear map `x W + b` with `W: [in, out]` and `b: [out]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        self.add_row(y, bias)
    }

    /// Negative log-likelihood of `target` under `softmax(logits)` for a single row.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let (m, n) = self.dims(logits);
        if m != 1 {
            return Err(Error::shape("cross_entropy", self.shape(logits), &[1, n]));
        }
        if target >= n {
            return Err(Error::IndexOutOfRange {
                op: "cross_entropy",
                index: target,
                len: n,
            });
        }
        let lp = self.log_softmax(logits);
        let picked = self.slice_cols(lp, target, target + 1)?;
        let s = self.sum(picked);
        Ok(self.scale(s, -1.0))
    }

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate across
    /// calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        for node in &self.nodes[..=loss.0] {
            if node.requires_grad && !node.value.all_finite() {
                return Err(Error::NonFinite { op: node.op.name() });
            }
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let node = &mut self.nodes[idx];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            for (input, ig) in self.input_grads(idx, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(())
    }

    /// Clears accumulated leaf gradients.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn input_grads(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|v| -v).collect())],
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                vec![
                    (*a, g.iter().zip(vb).map(|(g, y)| g * y).collect()),
                    (*b, g.iter().zip(va).map(|(g, x)| g * x).collect()),
                ]
            }
            Op::AddRow(a, row) => {
                let (m, n) = self.dims(*a);
                let mut gr = vec![0.0; n];
                for i in 0..m {
                    for (acc, v) in gr.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                        *acc += v;
                    }
                }
                vec![(*a, g.to_vec()), (*row, gr)]
            }
            Op::Scale(a, c) => vec![(*a, g.iter().map(|v| v * c).collect())],
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let mut res = Vec::with_capacity(2);
                if self.requires_grad(*a) {
                    res.push((*a, matmul_a_bt(g, vb, m, n, k)));
                }
                if self.requires_grad(*b) {
                    res.push((*b, matmul_at_b(va, g, m, k, n)));
                }
                res
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims(*a);
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] = g[j * m + i];
                    }
                }
                vec![(*a, ga)]
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; self.value(*a).len()])],
            Op::ConcatCols(parts) => {
                let (m, total) = (node.value.rows(), node.value.cols());
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let w = self.dims(p).1;
                        let mut gp = Vec::with_capacity(m * w);
                        for i in 0..m {
                            gp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        offset += w;
                        (p, gp)
                    })
                    .collect()
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let len = self.value(p).len();
                        let gp = g[offset..offset + len].to_vec();
                        offset += len;
                        (p, gp)
                    })
                    .collect()
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.dims(*a);
                let w = node.value.cols();
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    ga[i * n + start..i * n + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                vec![(*a, ga)]
            }
            Op::SliceRows(a, start) => {
                let n = self.dims(*a).1;
                let mut ga = vec![0.0; self.value(*a).len()];
                ga[start * n..start * n + g.len()].copy_from_slice(g);
                vec![(*a, ga)]
            }
            Op::Reshape(a) => vec![(*a, g.to_vec())],
            Op::MeanRows(a) => {
                let (m, n) = self.dims(*a);
                let inv = 1.0 / m as f64;
                let mut ga = Vec::with_capacity(m * n);
                for _ in 0..m {
                    ga.extend(g.iter().map(|v| v * inv));
                }
                vec![(*a, ga)]
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (m, n) = self.dims(*x);
                let gm = self.value(*gamma).data();
                let mut gx = vec![0.0; m * n];
                let mut gg = vec![0.0; n];
                let mut gb = vec![0.0; n];
                let nf = n as f64;
                for i in 0..m {
                    let gr = &g[i * n..(i + 1) * n];
                    let hr = &xhat[i * n..(i + 1) * n];
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..n {
                        gg[j] += gr[j] * hr[j];
                        gb[j] += gr[j];
                        let dh = gr[j] * gm[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                    }
                    for j in 0..n {
                        let dh = gr[j] * gm[j];
                        gx[i * n + j] = inv_std[i] / nf * (nf * dh - sum_dh - hr[j] * sum_dh_h);
                    }
                }
                vec![(*x, gx), (*gamma, gg), (*beta, gb)]
            }
            Op::Softmax(a) => {
                let (m, n) = self.dims(*a);
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    let y = &out[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        ga[i * n + j] = y[j] * (gr[j] - dot);
                    }
                }
                vec![(*a, ga)]
            }
            Op::LogSoftmax(a) => {
                let (m, n) = self.dims(*a);
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    let y = &out[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let total: f64 = gr.iter().sum();
                    for j in 0..n {
                        ga[i * n + j] = gr[j] - y[j].exp() * total;
                    }
                }
                vec![(*a, ga)]
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                let ga = x
                    .iter()
                    .zip(g)
                    .map(|(&x, &g)| {
                        let u = GELU_C * (x + GELU_A * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    })
                    .collect();
                vec![(*a, ga)]
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                vec![(*a, x.iter().zip(g).map(|(&x, &g)| if x > 0.0 { g } else { 0.0 }).collect())]
            }
            Op::L2Normalize { x, norms } => {
                let (m, n) = self.dims(*x);
                let mut gx = vec![0.0; m * n];
                for i in 0..m {
                    let y = &out[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        gx[i * n + j] = (gr[j] - y[j] * dot) / norms[i];
                    }
                }
                vec![(*x, gx)]
            }
            Op::GatherRows { table, index } => {
                let n = self.dims(*table).1;
                let mut gt = vec![0.0; self.value(*table).len()];
                for (i, &r) in index.iter().enumerate() {
                    for (acc, v) in gt[r * n..(r + 1) * n].iter_mut().zip(&g[i * n..(i + 1) * n]) {
                        *acc += v;
                    }
                }
                vec![(*table, gt)]
            }
            Op::ScatterRows { src, index } => {
                let n = self.dims(*src).1;
                let mut gs = Vec::with_capacity(index.len() * n);
                for &r in index {
                    gs.extend_from_slice(&g[r * n..(r + 1) * n]);
                }
                vec![(*src, gs)]
            }
            Op::Aggregate { x, adj } => {
                let (rows, c) = self.dims(*x);
                let j = adj.rows();
                let mut gx = Vec::with_capacity(rows * c);
                for block in 0..rows / j {
                    let gb = &g[block * j * c..(block + 1) * j * c];
                    gx.extend(matmul_at_b(adj.data(), gb, j, j, c));
                }
                vec![(*x, gx)]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::row(&[1.0, -2.0, 3.5]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::row(&[1.0, 2.0, 3.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::row(&[0.5, -1.0]));
        let a = g.sum(x);
        let two_x = g.scale(x, 2.0);
        let b = g.sum(two_x);
        let l = g.add(a, b).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[3.0, 3.0]);
    }

    #[test]
    fn repeated_backward_accumulates_until_zeroed() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::row(&[1.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn nan_forward_rejected() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::row(&[f64::NAN]));
        let s = g.sum(x);
        assert!(matches!(g.backward(s), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::no_grad();
        let x = g.constant(Tensor::matrix(2, 3, vec![1e3, -4.0, 0.2, -700.0, 3.0, 3.0]).unwrap());
        let y = g.softmax(x);
        for r in 0..2 {
            let s: f64 = g.value(y).row_slice(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_normalize_three_four() {
        let mut g = Graph::no_grad();
        let x = g.constant(Tensor::row(&[3.0, 4.0]));
        let y = g.l2_normalize(x);
        assert!(close(g.value(y).data(), &[0.6, 0.8], 1e-15));
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::no_grad();
        let a = Tensor::matrix(3, 3, (0..9).map(|v| v as f64 * 0.7 - 2.0).collect()).unwrap();
        let i = g.constant(Tensor::identity(3));
        let av = g.constant(a.clone());
        let p = g.matmul(i, av).unwrap();
        assert_eq!(g.value(p), &a);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
        let c = g.constant(Tensor::zeros(vec![3, 2]));
        assert!(matches!(g.add(a, c), Err(Error::ShapeMismatch { op: "add", .. })));
    }

    #[test]
    fn scatter_then_gather_roundtrip() {
        let mut g = Graph::new();
        let src = g.variable(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let sc = g.scatter_rows(src, &[3, 0], 4).unwrap();
        assert_eq!(g.value(sc).data(), &[3.0, 4.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0]);
        let back = g.gather_rows(sc, &[3, 0]).unwrap();
        assert_eq!(g.value(back).data(), g.value(src).data());
        assert!(g.scatter_rows(src, &[1, 1], 4).is_err());
    }

    #[test]
    fn no_grad_graph_records_nothing() {
        let mut g = Graph::no_grad();
        let x = g.variable(Tensor::row(&[1.0, 2.0]));
        assert!(!g.requires_grad(x));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(g.grad(x).is_none());
    }
}
