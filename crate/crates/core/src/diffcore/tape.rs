use std::collections::HashMap;

use super::array::{gemm, Array};
use super::DiffError;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Constant,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Neg(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Concat(Vec<Var>, usize),
    Slice { input: Var, axis: usize, start: usize },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Softmax(Var),
    LogSumExp(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Neg(..) => "neg",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(..) => "reshape",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Softmax(..) => "softmax",
            Op::LogSumExp(..) => "logsumexp",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Array,
    requires_grad: bool,
}

/// Define-by-run reverse-mode tape.
///
/// Every operation evaluates eagerly and appends a node; node values double as
/// the saved tensors for the backward sweep. Nodes are only ever appended, so
/// the node list is always in topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    names: HashMap<String, Var>,
}

/// Gradients of a scalar with respect to every node that requires them.
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros of the given shape when no path reaches it.
    pub fn take_or_zeros(&mut self, v: Var, shape: &[usize]) -> Array {
        self.grads.get_mut(v.0).and_then(Option::take).unwrap_or_else(|| Array::zeros(shape))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Binds a named differentiable leaf.
    pub fn input(&mut self, name: &str, value: Array) -> Result<Var, DiffError> {
        if self.names.contains_key(name) {
            return Err(DiffError::DuplicateInput(name.to_string()));
        }
        if !value.is_finite() {
            return Err(DiffError::NonFinite { node: format!("input '{name}'") });
        }
        let v = self.push_raw(Op::Input, value, true);
        self.names.insert(name.to_string(), v);
        Ok(v)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push_raw(Op::Constant, value, false)
    }

    pub fn lookup(&self, name: &str) -> Result<Var, DiffError> {
        self.names.get(name).copied().ok_or_else(|| DiffError::UnboundInput(name.to_string()))
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push_raw(&mut self, op: Op, value: Array, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Array, inputs: &[Var]) -> Result<Var, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite { node: format!("#{} {}", self.nodes.len(), op.name()) });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(op, value, requires_grad))
    }

    fn shape_err(&self, op: &str, detail: String) -> DiffError {
        DiffError::Shape { node: format!("#{} {}", self.nodes.len(), op), detail }
    }

    fn check(&self, v: Var) -> Result<(), DiffError> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(DiffError::UnknownNode(v.0))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = match (av.dims2(), bv.dims2()) {
            (Some((m, k)), Some((k2, n))) if k == k2 => (m, k, n),
            _ => return Err(self.shape_err("matmul", format!("{:?} x {:?}", av.shape(), bv.shape()))),
        };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, 0.0);
        self.push(Op::MatMul(a, b), Array::matrix(m, n, out), &[a, b])
    }

    /// `x[m,n] + b[n]`, broadcasting the bias over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, DiffError> {
        self.check(x)?;
        self.check(b)?;
        let (xv, bv) = (self.value(x), self.value(b));
        let n = match (xv.dims2(), bv.shape()) {
            (Some((_, n)), [nb]) if n == *nb => n,
            _ => return Err(self.shape_err("add_bias", format!("{:?} + {:?}", xv.shape(), bv.shape()))),
        };
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        self.push(Op::AddBias(x, b), out, &[x, b])
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: fn(f64, f64) -> f64) -> Result<Array, DiffError> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(self.shape_err(name, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        Ok(av.zip_map(bv, f))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(Op::Add(a, b), out, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(Op::Sub(a, b), out, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(Op::Mul(a, b), out, &[a, b])
    }

    /// Multiplication by a fixed scalar.
    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var, DiffError> {
        self.check(a)?;
        let out = self.value(a).map(|x| x * k);
        self.push(Op::Scale(a, k), out, &[a])
    }

    fn unary(&mut self, a: Var, op: Op, f: fn(f64) -> f64) -> Result<Var, DiffError> {
        self.check(a)?;
        let out = self.value(a).map(f);
        self.push(op, out, &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Op::Log(a), f64::ln)
    }

    /// Concatenates rank-2 arrays along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, DiffError> {
        if parts.is_empty() || axis > 1 {
            return Err(self.shape_err("concat", format!("{} parts, axis {axis}", parts.len())));
        }
        for &p in parts {
            self.check(p)?;
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| self.value(p).dims2())
            .collect::<Option<_>>()
            .ok_or_else(|| self.shape_err("concat", "inputs must be rank 2".into()))?;
        let out = if axis == 0 {
            let cols = dims[0].1;
            if dims.iter().any(|d| d.1 != cols) {
                return Err(self.shape_err("concat", format!("column mismatch {dims:?}")));
            }
            let rows = dims.iter().map(|d| d.0).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Array::matrix(rows, cols, data)
        } else {
            let rows = dims[0].0;
            if dims.iter().any(|d| d.0 != rows) {
                return Err(self.shape_err("concat", format!("row mismatch {dims:?}")));
            }
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(r));
                }
            }
            Array::matrix(rows, cols, data)
        };
        self.push(Op::Concat(parts.to_vec(), axis), out, parts)
    }

    /// Rows or columns `start..end` of a rank-2 array.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var, DiffError> {
        self.check(x)?;
        let xv = self.value(x);
        let (rows, cols) = xv
            .dims2()
            .ok_or_else(|| self.shape_err("slice", format!("rank-2 input required, got {:?}", xv.shape())))?;
        let extent = if axis == 0 { rows } else { cols };
        if axis > 1 || start > end || end > extent {
            return Err(self.shape_err("slice", format!("axis {axis} range {start}..{end} of {:?}", xv.shape())));
        }
        let out = if axis == 0 {
            Array::matrix(end - start, cols, xv.data()[start * cols..end * cols].to_vec())
        } else {
            let w = end - start;
            let mut data = Vec::with_capacity(rows * w);
            for r in 0..rows {
                data.extend_from_slice(&xv.row(r)[start..end]);
            }
            Array::matrix(rows, w, data)
        };
        self.push(Op::Slice { input: x, axis, start }, out, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, DiffError> {
        self.check(x)?;
        let out = self
            .value(x)
            .clone()
            .reshaped(shape)
            .map_err(|_| self.shape_err("reshape", format!("{:?} -> {shape:?}", self.value(x).shape())))?;
        self.push(Op::Reshape(x), out, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, DiffError> {
        self.check(x)?;
        let s = self.value(x).sum();
        self.push(Op::Sum(x), Array::scalar(s), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, DiffError> {
        self.check(x)?;
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(DiffError::Empty { node: format!("#{} mean", self.nodes.len()) });
        }
        let m = xv.sum() / xv.len() as f64;
        self.push(Op::Mean(x), Array::scalar(m), &[x])
    }

    fn last_axis(&self, x: Var, name: &str) -> Result<(usize, usize), DiffError> {
        let xv = self.value(x);
        let (rows, cols) = match xv.shape() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => return Err(self.shape_err(name, format!("rank 1 or 2 required, got {s:?}"))),
        };
        if cols == 0 {
            return Err(DiffError::Empty { node: format!("#{} {name}", self.nodes.len()) });
        }
        Ok((rows, cols))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, DiffError> {
        self.check(x)?;
        let (_, cols) = self.last_axis(x, "softmax")?;
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(cols) {
            softmax_in_place(row);
        }
        self.push(Op::Softmax(x), out, &[x])
    }

    /// Log-sum-exp along the last axis: `[n] -> []`, `[r, c] -> [r]`.
    pub fn logsumexp(&mut self, x: Var) -> Result<Var, DiffError> {
        self.check(x)?;
        let (rows, cols) = self.last_axis(x, "logsumexp")?;
        let xv = self.value(x);
        let data: Vec<f64> = xv.data().chunks(cols).map(logsumexp_slice).collect();
        let out = if xv.rank() == 1 { Array::scalar(data[0]) } else { Array::vector(data) };
        debug_assert_eq!(out.len(), rows);
        self.push(Op::LogSumExp(x), out, &[x])
    }

    /// Reverse sweep from a scalar node, summing contributions over all paths.
    pub fn backward(&self, output: Var) -> Result<Gradients, DiffError> {
        self.check(output)?;
        let out_val = self.value(output);
        if !out_val.shape().is_empty() {
            return Err(DiffError::NotScalar(out_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Array>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Array::scalar(1.0));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &Array, grads: &mut [Option<Array>]) {
        let mut acc = |v: Var, delta: Array| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Input | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2().unwrap();
                let n = bv.dims2().unwrap().1;
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, bv.data(), true, &mut da, 0.0);
                    acc(*a, Array::matrix(m, k, da));
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, g.data(), false, &mut db, 0.0);
                    acc(*b, Array::matrix(k, n, db));
                }
            }
            Op::AddBias(x, b) => {
                acc(*x, g.clone());
                let n = self.value(*b).len();
                let mut db = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (d, r) in db.iter_mut().zip(row) {
                        *d += r;
                    }
                }
                acc(*b, Array::vector(db));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, g.zip_map(bv, |gg, bb| gg * bb));
                acc(*b, g.zip_map(av, |gg, aa| gg * aa));
            }
            Op::Scale(a, k) => acc(*a, g.map(|v| v * k)),
            Op::Neg(a) => acc(*a, g.map(|v| -v)),
            Op::Tanh(a) => acc(*a, g.zip_map(y, |gg, yy| gg * (1.0 - yy * yy))),
            Op::Sigmoid(a) => acc(*a, g.zip_map(y, |gg, yy| gg * yy * (1.0 - yy))),
            Op::Softplus(a) => acc(*a, g.zip_map(self.value(*a), |gg, xx| gg * sigmoid(xx))),
            Op::Exp(a) => acc(*a, g.zip_map(y, |gg, yy| gg * yy)),
            Op::Log(a) => acc(*a, g.zip_map(self.value(*a), |gg, xx| gg / xx)),
            Op::Concat(parts, axis) => {
                let (_, cols) = g.dims2().unwrap();
                let mut offset = 0;
                for p in parts {
                    let (pr, pc) = self.value(*p).dims2().unwrap();
                    let piece = if *axis == 0 {
                        let d = g.data()[offset * cols..(offset + pr) * cols].to_vec();
                        offset += pr;
                        d
                    } else {
                        let mut d = Vec::with_capacity(pr * pc);
                        for r in 0..pr {
                            d.extend_from_slice(&g.row(r)[offset..offset + pc]);
                        }
                        offset += pc;
                        d
                    };
                    acc(*p, Array::matrix(pr, pc, piece));
                }
            }
            Op::Slice { input, axis, start } => {
                let (rows, cols) = self.value(*input).dims2().unwrap();
                let mut dx = Array::zeros(&[rows, cols]);
                let (gr, gc) = g.dims2().unwrap();
                if *axis == 0 {
                    dx.data_mut()[start * cols..(start + gr) * cols].copy_from_slice(g.data());
                } else {
                    for r in 0..rows {
                        dx.data_mut()[r * cols + start..r * cols + start + gc].copy_from_slice(g.row(r));
                    }
                }
                acc(*input, dx);
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                acc(*x, g.clone().reshaped(&shape).expect("reshape grad"));
            }
            Op::Sum(x) => acc(*x, Array::full(self.value(*x).shape(), g.item())),
            Op::Mean(x) => {
                let xv = self.value(*x);
                acc(*x, Array::full(xv.shape(), g.item() / xv.len() as f64));
            }
            Op::Softmax(x) => {
                let cols = *y.shape().last().unwrap();
                let mut dx = y.clone();
                for (dxr, (yr, gr)) in dx.data_mut().chunks_mut(cols).zip(y.data().chunks(cols).zip(g.data().chunks(cols))) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (d, (yy, gg)) in dxr.iter_mut().zip(yr.iter().zip(gr)) {
                        *d = yy * (gg - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::LogSumExp(x) => {
                let xv = self.value(*x);
                let cols = *xv.shape().last().unwrap();
                let mut dx = xv.clone();
                for ((row, lse), gg) in dx.data_mut().chunks_mut(cols).zip(y.data()).zip(g.data()) {
                    for v in row.iter_mut() {
                        *v = gg * (*v - lse).exp();
                    }
                }
                acc(*x, dx);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn logsumexp_slice(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

/// Numerically stable log Σ exp(v_i).
pub fn logsumexp(v: &[f64]) -> Result<f64, DiffError> {
    if v.is_empty() {
        return Err(DiffError::Empty { node: "logsumexp".into() });
    }
    Ok(logsumexp_slice(v))
}
