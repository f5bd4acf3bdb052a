//! Dynamic reverse-mode tape.
//!
//! A fresh [`Tape`] is built for every forward pass. Nodes are appended in
//! execution order, so every node's inputs precede it and the backward sweep
//! is a single reverse scan.

use super::params::{ParamId, ParamStore};
use super::tensor::{softmax_row, Tensor};
use super::NumericsError;

/// Reference to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param { store: u64, id: ParamId },
    Matmul(Var, Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Log(Var),
    Exp(Var),
    LogSigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Embedding { table: Var, ids: Vec<usize> },
    Concat(Vec<Var>),
    SliceCols { input: Var, start: usize },
    ConcatRows(Vec<Var>),
    SliceRows { input: Var, start: usize },
    SelectRows { input: Var, idx: Vec<Option<usize>> },
    Reshape(Var),
    Conv1d { input: Var, weight: Var, bias: Var, width: usize },
    MaxPoolTime { input: Var, argmax: Vec<usize> },
    Mean(Var),
    Sum(Var),
    Gather { input: Var, idx: Vec<usize> },
    WeightedNll { logits: Var, targets: Vec<usize>, weights: Vec<f64>, probs: Vec<f64> },
    Gumbel { logits: Var, soft: Vec<f64>, inv_tau: f64 },
}

/// How the right operand of a binary op maps onto the left one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    /// rhs has as many entries as the trailing axis of lhs.
    Row,
    /// rhs is a single value.
    Scalar,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Gradients from one backward sweep, indexed by node.
#[derive(Debug)]
pub struct Grads {
    per_node: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.per_node.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, detail: String) -> NumericsError {
    NumericsError::ShapeMismatch { op, detail }
}

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().unwrap()
}

/// `c[m,n] += a[m,k] * b[k,n]`, skipping zero entries of `a` (one-hot inputs are common).
fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m,k] += a[m,n] * b[k,n]^T`.
fn matmul_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s += x * y;
            }
            c[i * k + p] += s;
        }
    }
}

/// `c[k,n] += a[m,k]^T * b[m,n]`.
fn matmul_at_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(sigmoid(x)) without overflow.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Leaf whose tracking follows `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let tracked = tensor.requires_grad();
        self.push(tensor.detached(), Op::Leaf, tracked)
    }

    /// Untracked leaf.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let t = tensor.detached();
        self.push(t, Op::Leaf, false)
    }

    /// Binds a trainable parameter; its gradient flows back into `store`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id).detached();
        self.push(t, Op::Param { store: store.uid(), id }, true)
    }

    /// Binds a parameter as a constant (no gradient).
    pub fn frozen(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id).detached();
        self.push(t, Op::Leaf, false)
    }

    // ---- binary ops -------------------------------------------------------

    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast, NumericsError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            Ok(Bcast::Same)
        } else if self.value(b).numel() == 1 {
            Ok(Bcast::Scalar)
        } else if self.value(b).numel() == last_dim(sa) && sb.len() == 1 {
            Ok(Bcast::Row)
        } else {
            Err(mismatch(op, format!("lhs {sa:?} vs rhs {sb:?}")))
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: impl Fn(Var, Var, Bcast) -> Op,
    ) -> Result<Var, NumericsError> {
        let mode = self.bcast(name, a, b)?;
        let av = self.value(a);
        let bv = self.data(b);
        let cols = last_dim(av.shape());
        let data: Vec<f64> = match mode {
            Bcast::Same => av.data().iter().zip(bv).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::Scalar => av.data().iter().map(|&x| f(x, bv[0])).collect(),
            Bcast::Row => av.data().iter().enumerate().map(|(i, &x)| f(x, bv[i % cols])).collect(),
        };
        let shape = av.shape().to_vec();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::from_parts(shape, data), mk(a, b, mode), tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", format!("lhs {sa:?} vs rhs {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_acc(self.data(a), self.data(b), &mut out, m, k, n);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::Matmul(a, b), tracked))
    }

    // ---- unary ops --------------------------------------------------------

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        let tracked = self.tracked(a);
        self.push(t, op, tracked)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, log_sigmoid, Op::LogSigmoid(a))
    }

    /// Natural log; inputs must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var, NumericsError> {
        if let Some(bad) = self.data(a).iter().find(|&&x| x <= 0.0 || !x.is_finite()) {
            return Err(NumericsError::Domain { op: "log", value: *bad });
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let cols = last_dim(v.shape());
        let mut out = vec![0.0; v.numel()];
        for (src, dst) in v.data().chunks(cols).zip(out.chunks_mut(cols)) {
            softmax_row(src, dst);
        }
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        let tracked = self.tracked(a);
        self.push(t, Op::Softmax(a), tracked)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let cols = last_dim(v.shape());
        let mut out = Vec::with_capacity(v.numel());
        for row in v.data().chunks(cols) {
            let lse = super::tensor::log_sum_exp(row);
            out.extend(row.iter().map(|x| x - lse));
        }
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        let tracked = self.tracked(a);
        self.push(t, Op::LogSoftmax(a), tracked)
    }

    // ---- structural ops ---------------------------------------------------

    /// Rows of `table` ([vocab, dim]) selected by `ids`, giving [ids.len(), dim].
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 || ids.is_empty() {
            return Err(mismatch("embedding_lookup", format!("table {shape:?}, {} ids", ids.len())));
        }
        let (rows, dim) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(mismatch("embedding_lookup", format!("id {bad} out of range for {rows} rows")));
        }
        let src = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            out.extend_from_slice(&src[i * dim..(i + 1) * dim]);
        }
        let tracked = self.tracked(table);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), dim], out),
            Op::Embedding { table, ids: ids.to_vec() },
            tracked,
        ))
    }

    /// Concatenation along the trailing axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = parts.first().ok_or_else(|| mismatch("concat", "no inputs".into()))?;
        let lead: Vec<usize> = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(mismatch("concat", format!("leading axes {lead:?} vs {s:?}")));
            }
            widths.push(last_dim(s));
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat(parts.to_vec()), tracked))
    }

    /// Columns `start..start+len` of the trailing axis.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let shape = self.shape(a).to_vec();
        let cols = last_dim(&shape);
        if len == 0 || start + len > cols {
            return Err(mismatch("slice_cols", format!("{start}..{} of {cols}", start + len)));
        }
        let out: Vec<f64> =
            self.data(a).chunks(cols).flat_map(|row| row[start..start + len].iter().copied()).collect();
        let mut new_shape = shape;
        *new_shape.last_mut().unwrap() = len;
        let tracked = self.tracked(a);
        Ok(self.push(Tensor::from_parts(new_shape, out), Op::SliceCols { input: a, start }, tracked))
    }

    /// Stacks 2-D tensors with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = parts.first().ok_or_else(|| mismatch("concat_rows", "no inputs".into()))?;
        let cols = last_dim(self.shape(*first));
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != cols {
                return Err(mismatch("concat_rows", format!("expected [_, {cols}], got {s:?}")));
            }
            rows += s[0];
        }
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.data(p));
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(Tensor::from_parts(vec![rows, cols], out), Op::ConcatRows(parts.to_vec()), tracked))
    }

    /// Rows `start..start+len` of a 2-D tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || len == 0 || start + len > s[0] {
            return Err(mismatch("slice_rows", format!("rows {start}..{} of {s:?}", start + len)));
        }
        let cols = s[1];
        let out = self.data(a)[start * cols..(start + len) * cols].to_vec();
        let tracked = self.tracked(a);
        Ok(self.push(Tensor::from_parts(vec![len, cols], out), Op::SliceRows { input: a, start }, tracked))
    }

    /// Row `r` of the result is row `idx[r]` of the 2-D input, or zeros for `None`.
    pub fn select_rows(&mut self, a: Var, idx: &[Option<usize>]) -> Result<Var, NumericsError> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || idx.is_empty() {
            return Err(mismatch("select_rows", format!("{} indices into {s:?}", idx.len())));
        }
        let (rows, cols) = (s[0], s[1]);
        if let Some(bad) = idx.iter().flatten().find(|&&i| i >= rows) {
            return Err(mismatch("select_rows", format!("row {bad} out of range for {s:?}")));
        }
        let x = self.data(a);
        let mut out = vec![0.0; idx.len() * cols];
        for (r, i) in idx.iter().enumerate() {
            if let Some(i) = *i {
                out[r * cols..(r + 1) * cols].copy_from_slice(&x[i * cols..(i + 1) * cols]);
            }
        }
        let tracked = self.tracked(a);
        Ok(self.push(
            Tensor::from_parts(vec![idx.len(), cols], out),
            Op::SelectRows { input: a, idx: idx.to_vec() },
            tracked,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let t = self
            .value(a)
            .reshaped(shape.to_vec())
            .map_err(|_| mismatch("reshape", format!("{:?} -> {shape:?}", self.shape(a))))?;
        let tracked = self.tracked(a);
        Ok(self.push(t, Op::Reshape(a), tracked))
    }

    /// Valid 1-D convolution over time.
    ///
    /// `input` is [batch, len, channels] (or [len, channels]); `weight` is
    /// [width * channels, filters]; `bias` is [filters]. Output is
    /// [batch, len - width + 1, filters] (batch axis dropped for 2-D input).
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var, width: usize) -> Result<Var, NumericsError> {
        let s = self.shape(input).to_vec();
        let (batch, len, ch, squeeze) = match s.len() {
            2 => (1, s[0], s[1], true),
            3 => (s[0], s[1], s[2], false),
            _ => return Err(mismatch("conv1d", format!("input rank {} ({s:?})", s.len()))),
        };
        let ws = self.shape(weight).to_vec();
        if width == 0 || ws.len() != 2 || ws[0] != width * ch {
            return Err(mismatch("conv1d", format!("weight {ws:?} for width {width} x {ch} channels")));
        }
        let filters = ws[1];
        if self.value(bias).numel() != filters {
            return Err(mismatch("conv1d", format!("bias {:?} for {filters} filters", self.shape(bias))));
        }
        if len < width {
            return Err(mismatch("conv1d", format!("sequence length {len} < width {width}")));
        }
        let steps = len - width + 1;
        let x = self.data(input);
        let w = self.data(weight);
        let b = self.data(bias);
        let mut out = Vec::with_capacity(batch * steps * filters);
        for bi in 0..batch {
            for t in 0..steps {
                let start = (bi * len + t) * ch;
                let window = &x[start..start + width * ch];
                let mut row = b.to_vec();
                matmul_acc(window, w, &mut row, 1, width * ch, filters);
                out.extend_from_slice(&row);
            }
        }
        let shape = if squeeze { vec![steps, filters] } else { vec![batch, steps, filters] };
        let tracked = self.tracked(input) || self.tracked(weight) || self.tracked(bias);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Conv1d { input, weight, bias, width }, tracked))
    }

    /// Max over the time axis: [batch, time, c] -> [batch, c], or [time, c] -> [c].
    pub fn max_pool_over_time(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.shape(a).to_vec();
        let (batch, time, ch, squeeze) = match s.len() {
            2 => (1, s[0], s[1], true),
            3 => (s[0], s[1], s[2], false),
            _ => return Err(mismatch("max_pool_over_time", format!("input {s:?}"))),
        };
        let x = self.data(a);
        let mut out = Vec::with_capacity(batch * ch);
        let mut argmax = Vec::with_capacity(batch * ch);
        for b in 0..batch {
            for c in 0..ch {
                let mut best = (b * time) * ch + c;
                for t in 1..time {
                    let idx = (b * time + t) * ch + c;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
        let shape = if squeeze { vec![ch] } else { vec![batch, ch] };
        let tracked = self.tracked(a);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MaxPoolTime { input: a, argmax }, tracked))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.data().iter().sum::<f64>() / v.numel() as f64;
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(m), Op::Mean(a), tracked)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum::<f64>();
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::Sum(a), tracked)
    }

    /// Picks `a[r, idx[r]]` from each row of a [rows, cols] tensor.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var, NumericsError> {
        let s = self.shape(a).to_vec();
        let cols = last_dim(&s);
        let rows = self.value(a).numel() / cols;
        if idx.len() != rows || idx.iter().any(|&i| i >= cols) {
            return Err(mismatch("gather", format!("{} indices into {s:?}", idx.len())));
        }
        let x = self.data(a);
        let out: Vec<f64> = idx.iter().enumerate().map(|(r, &i)| x[r * cols + i]).collect();
        let tracked = self.tracked(a);
        Ok(self.push(Tensor::from_parts(vec![rows], out), Op::Gather { input: a, idx: idx.to_vec() }, tracked))
    }

    /// `sum_r weights[r] * -log softmax(logits[r])[targets[r]]` as a scalar.
    pub fn weighted_nll(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var, NumericsError> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || targets.len() != s[0] || weights.len() != s[0] {
            return Err(mismatch(
                "weighted_nll",
                format!("logits {s:?}, {} targets, {} weights", targets.len(), weights.len()),
            ));
        }
        let cols = s[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(mismatch("weighted_nll", format!("target {bad} >= {cols} classes")));
        }
        let x = self.data(logits);
        let mut probs = vec![0.0; x.len()];
        let mut total = 0.0;
        for (r, (row, prow)) in x.chunks(cols).zip(probs.chunks_mut(cols)).enumerate() {
            softmax_row(row, prow);
            if weights[r] != 0.0 {
                let lse = super::tensor::log_sum_exp(row);
                total += weights[r] * (lse - row[targets[r]]);
            }
        }
        let tracked = self.tracked(logits);
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedNll { logits, targets: targets.to_vec(), weights: weights.to_vec(), probs },
            tracked,
        ))
    }

    /// Mean cross-entropy of rows of `logits` against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NumericsError> {
        let n = targets.len().max(1) as f64;
        let w = vec![1.0 / n; targets.len()];
        self.weighted_nll(logits, targets, &w)
    }

    /// Gumbel-softmax over the trailing axis with externally supplied noise.
    ///
    /// With `hard` the forward value is the one-hot argmax of the relaxed
    /// sample while the backward rule is that of the soft sample.
    pub fn gumbel_softmax_with_noise(
        &mut self,
        logits: Var,
        noise: &[f64],
        temperature: f64,
        hard: bool,
    ) -> Result<Var, NumericsError> {
        if !(temperature > 0.0) {
            return Err(NumericsError::Temperature(temperature));
        }
        let v = self.value(logits);
        if noise.len() != v.numel() {
            return Err(mismatch("gumbel_softmax", format!("{} noise values for {:?}", noise.len(), v.shape())));
        }
        let cols = last_dim(v.shape());
        let inv_tau = 1.0 / temperature;
        let perturbed: Vec<f64> = v.data().iter().zip(noise).map(|(l, g)| (l + g) * inv_tau).collect();
        let mut soft = vec![0.0; perturbed.len()];
        for (src, dst) in perturbed.chunks(cols).zip(soft.chunks_mut(cols)) {
            softmax_row(src, dst);
        }
        let value = if hard {
            let mut one_hot = vec![0.0; soft.len()];
            for (r, row) in soft.chunks(cols).enumerate() {
                one_hot[r * cols + super::tensor::argmax(row)] = 1.0;
            }
            one_hot
        } else {
            soft.clone()
        };
        let shape = v.shape().to_vec();
        let tracked = self.tracked(logits);
        Ok(self.push(Tensor::from_parts(shape, value), Op::Gumbel { logits, soft, inv_tau }, tracked))
    }

    /// Relaxed sample the straight-through node used for its backward rule.
    pub fn gumbel_soft_values(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Gumbel { soft, .. } => Some(soft),
            _ => None,
        }
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads, NumericsError> {
        if self.nodes.is_empty() {
            return Err(NumericsError::EmptyTape);
        }
        if !self.value(loss).is_scalar() {
            return Err(NumericsError::NonScalarLoss { shape: self.shape(loss).to_vec() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].tracked {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Grads { per_node: grads })
    }

    /// Backward pass that accumulates into the gradients of `store`.
    ///
    /// Every parameter of `store` ends up with a gradient buffer; ones the
    /// loss does not reach get zeros.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Grads, NumericsError> {
        let grads = self.backward(loss)?;
        let uid = store.uid();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param { store: s, id } = node.op {
                if s == uid {
                    if let Some(g) = grads.per_node.get(i).and_then(|g| g.as_deref()) {
                        store.get_mut(id).accumulate_grad(g);
                    }
                }
            }
        }
        for t in store.tensors_mut() {
            t.ensure_grad();
        }
        Ok(grads)
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut send = |v: Var, delta: Vec<f64>| {
            if !self.nodes[v.0].tracked {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param { .. } => {}
            Op::Matmul(a, b) => {
                let sa = self.shape(*a);
                let (m, k) = (sa[0], sa[1]);
                let n = self.shape(*b)[1];
                if self.tracked(*a) {
                    let mut da = vec![0.0; m * k];
                    matmul_bt_acc(g, self.data(*b), &mut da, m, n, k);
                    send(*a, da);
                }
                if self.tracked(*b) {
                    let mut db = vec![0.0; k * n];
                    matmul_at_acc(self.data(*a), g, &mut db, m, k, n);
                    send(*b, db);
                }
            }
            Op::Add(a, b, mode) | Op::Sub(a, b, mode) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                send(*a, g.to_vec());
                if self.tracked(*b) {
                    let db = self.reduce_bcast(*b, *mode, g.iter().map(|x| sign * x));
                    send(*b, db);
                }
            }
            Op::Mul(a, b, mode) => {
                let av = self.data(*a);
                let bv = self.data(*b);
                let cols = last_dim(self.shape(*a));
                let bat = |j: usize| match mode {
                    Bcast::Same => bv[j],
                    Bcast::Row => bv[j % cols],
                    Bcast::Scalar => bv[0],
                };
                if self.tracked(*a) {
                    send(*a, g.iter().enumerate().map(|(j, x)| x * bat(j)).collect());
                }
                if self.tracked(*b) {
                    let db = self.reduce_bcast(*b, *mode, g.iter().zip(av).map(|(x, y)| x * y));
                    send(*b, db);
                }
            }
            Op::Scale(a, c) => send(*a, g.iter().map(|x| x * c).collect()),
            Op::AddScalar(a) | Op::Reshape(a) => send(*a, g.to_vec()),
            Op::Tanh(a) => send(*a, g.iter().zip(out).map(|(x, y)| x * (1.0 - y * y)).collect()),
            Op::Sigmoid(a) => send(*a, g.iter().zip(out).map(|(x, y)| x * y * (1.0 - y)).collect()),
            Op::Relu(a) => {
                let inp = self.data(*a);
                send(*a, g.iter().zip(inp).map(|(x, &v)| if v > 0.0 { *x } else { 0.0 }).collect())
            }
            Op::Log(a) => send(*a, g.iter().zip(self.data(*a)).map(|(x, v)| x / v).collect()),
            Op::Exp(a) => send(*a, g.iter().zip(out).map(|(x, y)| x * y).collect()),
            Op::LogSigmoid(a) => {
                send(*a, g.iter().zip(self.data(*a)).map(|(x, &v)| x * sigmoid(-v)).collect())
            }
            Op::Softmax(a) => {
                let cols = last_dim(node.value.shape());
                let mut d = vec![0.0; g.len()];
                for ((gr, yr), dr) in g.chunks(cols).zip(out.chunks(cols)).zip(d.chunks_mut(cols)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                    for ((dv, x), y) in dr.iter_mut().zip(gr).zip(yr) {
                        *dv = y * (x - dot);
                    }
                }
                send(*a, d);
            }
            Op::LogSoftmax(a) => {
                let cols = last_dim(node.value.shape());
                let mut d = vec![0.0; g.len()];
                for ((gr, yr), dr) in g.chunks(cols).zip(out.chunks(cols)).zip(d.chunks_mut(cols)) {
                    let total: f64 = gr.iter().sum();
                    for ((dv, x), y) in dr.iter_mut().zip(gr).zip(yr) {
                        *dv = x - y.exp() * total;
                    }
                }
                send(*a, d);
            }
            Op::Embedding { table, ids } => {
                let dim = self.shape(*table)[1];
                let mut d = vec![0.0; self.value(*table).numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for (dv, x) in d[id * dim..(id + 1) * dim].iter_mut().zip(&g[r * dim..(r + 1) * dim]) {
                        *dv += x;
                    }
                }
                send(*table, d);
            }
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts.iter().map(|&p| last_dim(self.shape(p))).collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    send(p, d);
                    offset += w;
                }
            }
            Op::SliceCols { input, start } => {
                let cols = last_dim(self.shape(*input));
                let len = last_dim(node.value.shape());
                let mut d = vec![0.0; self.value(*input).numel()];
                for (r, gr) in g.chunks(len).enumerate() {
                    d[r * cols + start..r * cols + start + len].copy_from_slice(gr);
                }
                send(*input, d);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    send(p, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::SliceRows { input, start } => {
                let cols = last_dim(self.shape(*input));
                let mut d = vec![0.0; self.value(*input).numel()];
                d[start * cols..start * cols + g.len()].copy_from_slice(g);
                send(*input, d);
            }
            Op::SelectRows { input, idx } => {
                let cols = last_dim(self.shape(*input));
                let mut d = vec![0.0; self.value(*input).numel()];
                for (r, i) in idx.iter().enumerate() {
                    if let Some(i) = *i {
                        for (dv, x) in d[i * cols..(i + 1) * cols].iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                            *dv += x;
                        }
                    }
                }
                send(*input, d);
            }
            Op::Conv1d { input, weight, bias, width } => {
                let s = self.shape(*input);
                let (batch, len, ch) = if s.len() == 2 { (1, s[0], s[1]) } else { (s[0], s[1], s[2]) };
                let filters = self.shape(*weight)[1];
                let steps = len - width + 1;
                let k = width * ch;
                let x = self.data(*input);
                let w = self.data(*weight);
                let mut dx = vec![0.0; x.len()];
                let mut dw = vec![0.0; w.len()];
                let mut db = vec![0.0; filters];
                for bi in 0..batch {
                    for t in 0..steps {
                        let grow = &g[(bi * steps + t) * filters..(bi * steps + t + 1) * filters];
                        let start = (bi * len + t) * ch;
                        db.iter_mut().zip(grow).for_each(|(d, v)| *d += v);
                        matmul_at_acc(&x[start..start + k], grow, &mut dw, 1, k, filters);
                        matmul_bt_acc(grow, w, &mut dx[start..start + k], 1, filters, k);
                    }
                }
                send(*input, dx);
                send(*weight, dw);
                send(*bias, db);
            }
            Op::MaxPoolTime { input, argmax } => {
                let mut d = vec![0.0; self.value(*input).numel()];
                for (&idx, x) in argmax.iter().zip(g) {
                    d[idx] += x;
                }
                send(*input, d);
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                send(*a, vec![g[0] / n as f64; n]);
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                send(*a, vec![g[0]; n]);
            }
            Op::Gather { input, idx } => {
                let cols = last_dim(self.shape(*input));
                let mut d = vec![0.0; self.value(*input).numel()];
                for (r, (&i, x)) in idx.iter().zip(g).enumerate() {
                    d[r * cols + i] += x;
                }
                send(*input, d);
            }
            Op::WeightedNll { logits, targets, weights, probs } => {
                let cols = last_dim(self.shape(*logits));
                let mut d = vec![0.0; probs.len()];
                for (r, (dr, pr)) in d.chunks_mut(cols).zip(probs.chunks(cols)).enumerate() {
                    let w = weights[r] * g[0];
                    if w == 0.0 {
                        continue;
                    }
                    for (dv, p) in dr.iter_mut().zip(pr) {
                        *dv = w * p;
                    }
                    dr[targets[r]] -= w;
                }
                send(*logits, d);
            }
            Op::Gumbel { logits, soft, inv_tau } => {
                let cols = last_dim(node.value.shape());
                let mut d = vec![0.0; g.len()];
                for ((gr, yr), dr) in g.chunks(cols).zip(soft.chunks(cols)).zip(d.chunks_mut(cols)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                    for ((dv, x), y) in dr.iter_mut().zip(gr).zip(yr) {
                        *dv = inv_tau * y * (x - dot);
                    }
                }
                send(*logits, d);
            }
        }
    }

    fn reduce_bcast(&self, b: Var, mode: Bcast, g: impl Iterator<Item = f64>) -> Vec<f64> {
        match mode {
            Bcast::Same => g.collect(),
            Bcast::Scalar => vec![g.sum()],
            Bcast::Row => {
                let n = self.value(b).numel();
                let mut d = vec![0.0; n];
                for (j, x) in g.enumerate() {
                    d[j % n] += x;
                }
                d
            }
        }
    }
}
