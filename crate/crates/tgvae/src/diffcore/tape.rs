//! Eager tape for reverse-mode differentiation.
//!
//! Ops execute immediately as the graph is built and record themselves on a
//! linear tape; `backward` replays the tape in reverse, accumulating
//! vector-Jacobian products. Node indices are assigned in construction order,
//! so every node's inputs precede it and the tape is acyclic by construction.
//!
//! Inputs to `log` are clamped below at [`LOG_FLOOR`], inputs to `arccos` to
//! `[-1 + ACOS_MARGIN, 1 - ACOS_MARGIN]`; the backward pass treats the
//! clamped region as constant.

use std::collections::BTreeMap;
use std::collections::HashMap;

use super::tensor::{ParamStore, Tensor};
use super::{DiffError, Result};

/// Floor applied to every `log` argument.
pub const LOG_FLOOR: f64 = 1e-10;
/// Margin keeping `arccos` arguments strictly inside (-1, 1).
pub const ACOS_MARGIN: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(String),
    MatVec(Var, Var),
    VecMat(Var, Var),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    SMul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    RsubConst(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Sqrt(Var),
    Arccos(Var),
    Abs(Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    Concat(Var, Var),
    Slice(Var, usize, usize),
    Pick(Var, usize),
    Stack(Vec<Var>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatVec(..) => "matvec",
            Op::VecMat(..) => "vecmat",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::SMul(..) => "smul",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::RsubConst(..) => "rsub_const",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Sqrt(_) => "sqrt",
            Op::Arccos(_) => "arccos",
            Op::Abs(_) => "abs",
            Op::Softmax(_) => "softmax",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Dot(..) => "dot",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
            Op::Pick(..) => "pick",
            Op::Stack(_) => "stack",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients produced by [`Tape::backward`].
///
/// Every parameter of the bound store has an entry; parameters the loss never
/// touched carry zeros.
pub struct Gradients {
    param_grads: BTreeMap<String, Tensor>,
    node_grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.param_grads.get(name).ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.param_grads
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.param_grads
    }

    /// Gradient that reached an arbitrary node, if any did.
    pub fn of(&self, var: Var) -> Option<&[f64]> {
        self.node_grads[var.0].as_deref()
    }
}

/// Computation tape bound to a parameter store.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<String, Var>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (row_in, row_out) in data.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, x) in row_out.iter_mut().zip(row_in) {
            *o = (x - max).exp();
            sum += *o;
        }
        for o in row_out.iter_mut() {
            *o /= sum;
        }
    }
    out
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape { params, nodes: Vec::new(), param_vars: HashMap::new() }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Value computed at a node.
    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        if !value.all_finite() {
            return Err(DiffError::NonFinite { node: self.nodes.len(), op: op.name() });
        }
        let id = self.nodes.len();
        self.nodes.push(Node { op, value });
        Ok(Var(id))
    }

    // ── Leaves ───────────────────────────────────────────────────────

    /// Leaf with no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Constant, value)
    }

    pub fn constant_scalar(&mut self, x: f64) -> Result<Var> {
        self.constant(Tensor::scalar(x))
    }

    pub fn constant_vector(&mut self, data: Vec<f64>) -> Result<Var> {
        self.constant(Tensor::vector(data))
    }

    /// Bind a named parameter from the store. Repeated binds of the same name
    /// return the same node, so gradient contributions accumulate.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&var) = self.param_vars.get(name) {
            return Ok(var);
        }
        let value = self.params.get(name)?.clone();
        let var = self.push(Op::Param(name.to_string()), value)?;
        self.param_vars.insert(name.to_string(), var);
        Ok(var)
    }

    // ── Shape guards ─────────────────────────────────────────────────

    fn want_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(DiffError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        Ok(())
    }

    fn want_scalar(&self, op: &'static str, a: Var) -> Result<()> {
        if self.value(a).numel() != 1 {
            return Err(DiffError::ShapeMismatch {
                op,
                detail: format!("expected scalar, got {:?}", self.shape(a)),
            });
        }
        Ok(())
    }

    fn want_vector(&self, op: &'static str, a: Var) -> Result<()> {
        if !self.value(a).is_vector() {
            return Err(DiffError::ShapeMismatch {
                op,
                detail: format!("expected vector, got {:?}", self.shape(a)),
            });
        }
        Ok(())
    }

    fn want_matrix(&self, op: &'static str, a: Var) -> Result<(usize, usize)> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(DiffError::ShapeMismatch {
                op,
                detail: format!("expected matrix, got {:?}", s),
            });
        }
        Ok((s[0], s[1]))
    }

    // ── Linear algebra ───────────────────────────────────────────────

    /// `m[r,c] * v[c] -> [r]`
    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let (rows, cols) = self.want_matrix("matvec", m)?;
        self.want_vector("matvec", v)?;
        if self.shape(v)[0] != cols {
            return Err(DiffError::ShapeMismatch {
                op: "matvec",
                detail: format!("[{rows},{cols}] * {:?}", self.shape(v)),
            });
        }
        let md = self.value(m).data();
        let vd = self.value(v).data();
        let mut out = vec![0.0; rows];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &md[r * cols..(r + 1) * cols];
            *o = row.iter().zip(vd).map(|(a, b)| a * b).sum();
        }
        self.push(Op::MatVec(m, v), Tensor::vector(out))
    }

    /// `v[r]ᵀ * m[r,c] -> [c]`
    pub fn vecmat(&mut self, v: Var, m: Var) -> Result<Var> {
        let (rows, cols) = self.want_matrix("vecmat", m)?;
        self.want_vector("vecmat", v)?;
        if self.shape(v)[0] != rows {
            return Err(DiffError::ShapeMismatch {
                op: "vecmat",
                detail: format!("{:?} * [{rows},{cols}]", self.shape(v)),
            });
        }
        let md = self.value(m).data();
        let vd = self.value(v).data();
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            let x = vd[r];
            for (o, mv) in out.iter_mut().zip(&md[r * cols..(r + 1) * cols]) {
                *o += x * mv;
            }
        }
        self.push(Op::VecMat(v, m), Tensor::vector(out))
    }

    /// `a[m,k] * b[k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.want_matrix("matmul", a)?;
        let (k2, n) = self.want_matrix("matmul", b)?;
        if k != k2 {
            return Err(DiffError::ShapeMismatch {
                op: "matmul",
                detail: format!("[{m},{k}] * [{k2},{n}]"),
            });
        }
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for l in 0..k {
                let x = ad[i * k + l];
                for j in 0..n {
                    out[i * n + j] += x * bd[l * n + j];
                }
            }
        }
        self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out)?)
    }

    // ── Elementwise ──────────────────────────────────────────────────

    fn zip_op(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.want_same_shape(name, a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(op, Tensor::new(shape, out)?)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Scalar node times tensor node.
    pub fn smul(&mut self, s: Var, x: Var) -> Result<Var> {
        self.want_scalar("smul", s)?;
        let sv = self.value(s).item();
        let out: Vec<f64> = self.value(x).data().iter().map(|&v| sv * v).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::SMul(s, x), Tensor::new(shape, out)?)
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out: Vec<f64> = self.value(x).data().iter().map(|&v| c * v).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Scale(x, c), Tensor::new(shape, out)?)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Result<Var> {
        let out: Vec<f64> = self.value(x).data().iter().map(|&v| v + c).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::AddConst(x), Tensor::new(shape, out)?)
    }

    /// `c - x` elementwise.
    pub fn rsub_const(&mut self, c: f64, x: Var) -> Result<Var> {
        let out: Vec<f64> = self.value(x).data().iter().map(|&v| c - v).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::RsubConst(x), Tensor::new(shape, out)?)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let out: Vec<f64> = self.value(x).data().iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(op, Tensor::new(shape, out)?)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    /// Natural log with the argument floored at [`LOG_FLOOR`].
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.max(LOG_FLOOR).ln(), Op::Log(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    /// Arc cosine with the argument clamped into `(-1, 1)` by [`ACOS_MARGIN`].
    pub fn arccos(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.clamp(-1.0 + ACOS_MARGIN, 1.0 - ACOS_MARGIN).acos(), Op::Arccos(x))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    /// Softmax over a vector, or row-wise over a matrix.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let cols = match t.shape() {
            [n] => *n,
            [_, c] => *c,
            s => {
                return Err(DiffError::ShapeMismatch {
                    op: "softmax",
                    detail: format!("expected vector or matrix, got {:?}", s),
                })
            }
        };
        if cols == 0 {
            return Err(DiffError::ShapeMismatch { op: "softmax", detail: "empty axis".into() });
        }
        let out = softmax_rows(t.data(), cols);
        let shape = t.shape().to_vec();
        self.push(Op::Softmax(x), Tensor::new(shape, out)?)
    }

    // ── Reductions ───────────────────────────────────────────────────

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel().max(1);
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Op::Mean(x), Tensor::scalar(s / n as f64))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.want_same_shape("dot", a, b)?;
        let s: f64 = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).sum();
        self.push(Op::Dot(a, b), Tensor::scalar(s))
    }

    // ── Structure ────────────────────────────────────────────────────

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        self.want_vector("concat", a)?;
        self.want_vector("concat", b)?;
        let mut out = self.value(a).data().to_vec();
        out.extend_from_slice(self.value(b).data());
        self.push(Op::Concat(a, b), Tensor::vector(out))
    }

    /// Contiguous slice of the flat data; returns a vector of length `len`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let numel = self.value(x).numel();
        if start + len > numel {
            return Err(DiffError::ShapeMismatch {
                op: "slice",
                detail: format!("[{start}..{}] out of {numel}", start + len),
            });
        }
        let out = self.value(x).data()[start..start + len].to_vec();
        self.push(Op::Slice(x, start, len), Tensor::vector(out))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let (rows, cols) = self.want_matrix("row", m)?;
        if i >= rows {
            return Err(DiffError::ShapeMismatch {
                op: "row",
                detail: format!("row {i} of [{rows},{cols}]"),
            });
        }
        self.slice(m, i * cols, cols)
    }

    /// Single element as a scalar.
    pub fn pick(&mut self, x: Var, i: usize) -> Result<Var> {
        let numel = self.value(x).numel();
        if i >= numel {
            return Err(DiffError::ShapeMismatch {
                op: "pick",
                detail: format!("index {i} out of {numel}"),
            });
        }
        let v = self.value(x).data()[i];
        self.push(Op::Pick(x, i), Tensor::scalar(v))
    }

    /// Stack scalars into a vector.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::with_capacity(parts.len());
        for &p in parts {
            self.want_scalar("stack", p)?;
            out.push(self.value(p).item());
        }
        self.push(Op::Stack(parts.to_vec()), Tensor::vector(out))
    }

    // ── Composites ───────────────────────────────────────────────────

    /// `w*x + b`
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    /// Sum of a slice of scalars (or zero for an empty slice).
    pub fn sum_scalars(&mut self, parts: &[Var]) -> Result<Var> {
        match parts {
            [] => self.constant_scalar(0.0),
            [only] => Ok(*only),
            _ => {
                let stacked = self.stack(parts)?;
                self.sum(stacked)
            }
        }
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns per-parameter gradients (zero
    /// for parameters the loss does not reach) plus raw per-node gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(DiffError::NonScalarLoss { shape: self.shape(loss).to_vec() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(d_out) = grads[idx].take() else { continue };
            self.backstep(idx, &d_out, &mut grads);
            grads[idx] = Some(d_out);
        }

        let mut param_grads: BTreeMap<String, Tensor> = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                let grad = match &grads[idx] {
                    Some(g) => Tensor::new(node.value.shape().to_vec(), g.clone())?,
                    None => Tensor::zeros(node.value.shape().to_vec()),
                };
                param_grads.insert(name.clone(), grad);
            }
        }
        for (name, tensor) in self.params.iter() {
            param_grads
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(tensor.shape().to_vec()));
        }
        Ok(Gradients { param_grads, node_grads: grads })
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, contrib: &[f64]) {
        match &mut grads[var.0] {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += ci;
                }
            }
            None => grads[var.0] = Some(contrib.to_vec()),
        }
    }

    fn backstep(&self, idx: usize, d_out: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &self.nodes[idx].op {
            Op::Constant | Op::Param(_) => {}

            Op::MatVec(m, v) => {
                let cols = val(*v).len();
                let vd = val(*v);
                let md = val(*m);
                let mut d_m = vec![0.0; md.len()];
                let mut d_v = vec![0.0; cols];
                for (r, &d) in d_out.iter().enumerate() {
                    for c in 0..cols {
                        d_m[r * cols + c] += d * vd[c];
                        d_v[c] += d * md[r * cols + c];
                    }
                }
                Self::accumulate(grads, *m, &d_m);
                Self::accumulate(grads, *v, &d_v);
            }

            Op::VecMat(v, m) => {
                let rows = val(*v).len();
                let cols = d_out.len();
                let vd = val(*v);
                let md = val(*m);
                let mut d_m = vec![0.0; md.len()];
                let mut d_v = vec![0.0; rows];
                for r in 0..rows {
                    for (c, &d) in d_out.iter().enumerate() {
                        d_m[r * cols + c] += vd[r] * d;
                        d_v[r] += d * md[r * cols + c];
                    }
                }
                Self::accumulate(grads, *v, &d_v);
                Self::accumulate(grads, *m, &d_m);
            }

            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let ad = val(*a);
                let bd = val(*b);
                let mut d_a = vec![0.0; m * k];
                let mut d_b = vec![0.0; k * n];
                // dA = dC Bᵀ ; dB = Aᵀ dC
                for i in 0..m {
                    for j in 0..n {
                        let d = d_out[i * n + j];
                        for l in 0..k {
                            d_a[i * k + l] += d * bd[l * n + j];
                            d_b[l * n + j] += ad[i * k + l] * d;
                        }
                    }
                }
                Self::accumulate(grads, *a, &d_a);
                Self::accumulate(grads, *b, &d_b);
            }

            Op::Add(a, b) => {
                Self::accumulate(grads, *a, d_out);
                Self::accumulate(grads, *b, d_out);
            }

            Op::Sub(a, b) => {
                Self::accumulate(grads, *a, d_out);
                let neg: Vec<f64> = d_out.iter().map(|d| -d).collect();
                Self::accumulate(grads, *b, &neg);
            }

            Op::Mul(a, b) => {
                let d_a: Vec<f64> = d_out.iter().zip(val(*b)).map(|(d, y)| d * y).collect();
                let d_b: Vec<f64> = d_out.iter().zip(val(*a)).map(|(d, x)| d * x).collect();
                Self::accumulate(grads, *a, &d_a);
                Self::accumulate(grads, *b, &d_b);
            }

            Op::Div(a, b) => {
                let d_a: Vec<f64> = d_out.iter().zip(val(*b)).map(|(d, y)| d / y).collect();
                let d_b: Vec<f64> = d_out
                    .iter()
                    .zip(val(*a).iter().zip(val(*b)))
                    .map(|(d, (x, y))| -d * x / (y * y))
                    .collect();
                Self::accumulate(grads, *a, &d_a);
                Self::accumulate(grads, *b, &d_b);
            }

            Op::SMul(s, x) => {
                let sv = val(*s)[0];
                let d_s: f64 = d_out.iter().zip(val(*x)).map(|(d, v)| d * v).sum();
                let d_x: Vec<f64> = d_out.iter().map(|d| sv * d).collect();
                Self::accumulate(grads, *s, &[d_s]);
                Self::accumulate(grads, *x, &d_x);
            }

            Op::Scale(x, c) => {
                let d_x: Vec<f64> = d_out.iter().map(|d| c * d).collect();
                Self::accumulate(grads, *x, &d_x);
            }

            Op::AddConst(x) => Self::accumulate(grads, *x, d_out),

            Op::RsubConst(x) => {
                let d_x: Vec<f64> = d_out.iter().map(|d| -d).collect();
                Self::accumulate(grads, *x, &d_x);
            }

            Op::Exp(x) => {
                let out = self.nodes[idx].value.data();
                let d_x: Vec<f64> = d_out.iter().zip(out).map(|(d, o)| d * o).collect();
                Self::accumulate(grads, *x, &d_x);
            }

            Op::Log(x) => {
                let d_x: Vec<f64> = d_out
                    .iter()
                    .zip(val(*x))
                    .map(|(d, &v)| if v >= LOG_FLOOR { d / v } else { 0.0 })
                    .collect();
                Self::accumulate(grads, *x, &d_x);
            }

            Op::Tanh(x) => {
                let out = self.nodes[idx].value.data();
                let d_x: Vec<f64> = d_out.iter().zip(out).map(|(d, o)| d * (1.0 - o * o)).collect();
                Self::accumulate(grads, *x, &d_x);
            }

            Op::Sigmoid(x) => {
                let out = self.nodes[idx].value.data();
                let d_x: Vec<f64> =
                    d_out.iter().zip(out).map(|(d, o)| d * o * (1.0 - o)).collect();
                Self::accumulate(grads, *x, &d_x);
            }

            Op::Relu(x) => {
                let d_x: Vec<f64> = d_out
                    .iter()
                    .zip(val(*x))
                    .map(|(d, &v)| if v > 0.0 { *d } else { 0.0 })
                    .collect();
                Self::accumulate(grads, *x, &d_x);
            }

            Op::Sqrt(x) => {
                let out = self.nodes[idx].value.data();
                let d_x: Vec<f64> = d_out.iter().zip(out).map(|(d, o)| d / (2.0 * o)).collect();
                Self::accumulate(grads, *x, &d_x);
            }

            Op::Arccos(x) => {
                let d_x: Vec<f64> = d_out
                    .iter()
                    .zip(val(*x))
                    .map(|(d, &v)| {
                        if v > -1.0 + ACOS_MARGIN && v < 1.0 - ACOS_MARGIN {
                            -d / (1.0 - v * v).sqrt()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                Self::accumulate(grads, *x, &d_x);
            }

            Op::Abs(x) => {
                let d_x: Vec<f64> = d_out
                    .iter()
                    .zip(val(*x))
                    .map(|(d, &v)| d * if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 })
                    .collect();
                Self::accumulate(grads, *x, &d_x);
            }

            Op::Softmax(x) => {
                let out = self.nodes[idx].value.data();
                let cols = match self.shape(*x) {
                    [n] => *n,
                    [_, c] => *c,
                    _ => unreachable!("softmax input validated on construction"),
                };
                let mut d_x = vec![0.0; out.len()];
                for r in 0..out.len() / cols {
                    let base = r * cols;
                    let dot: f64 =
                        (0..cols).map(|c| d_out[base + c] * out[base + c]).sum();
                    for c in 0..cols {
                        d_x[base + c] = out[base + c] * (d_out[base + c] - dot);
                    }
                }
                Self::accumulate(grads, *x, &d_x);
            }

            Op::Sum(x) => {
                let d = d_out[0];
                let d_x = vec![d; val(*x).len()];
                Self::accumulate(grads, *x, &d_x);
            }

            Op::Mean(x) => {
                let n = val(*x).len().max(1) as f64;
                let d = d_out[0] / n;
                let d_x = vec![d; val(*x).len()];
                Self::accumulate(grads, *x, &d_x);
            }

            Op::Dot(a, b) => {
                let d = d_out[0];
                let d_a: Vec<f64> = val(*b).iter().map(|y| d * y).collect();
                let d_b: Vec<f64> = val(*a).iter().map(|x| d * x).collect();
                Self::accumulate(grads, *a, &d_a);
                Self::accumulate(grads, *b, &d_b);
            }

            Op::Concat(a, b) => {
                let na = val(*a).len();
                Self::accumulate(grads, *a, &d_out[..na]);
                Self::accumulate(grads, *b, &d_out[na..]);
            }

            Op::Slice(x, start, len) => {
                let mut d_x = vec![0.0; val(*x).len()];
                d_x[*start..start + len].copy_from_slice(d_out);
                Self::accumulate(grads, *x, &d_x);
            }

            Op::Pick(x, i) => {
                let mut d_x = vec![0.0; val(*x).len()];
                d_x[*i] = d_out[0];
                Self::accumulate(grads, *x, &d_x);
            }

            Op::Stack(parts) => {
                for (p, &d) in parts.iter().zip(d_out) {
                    Self::accumulate(grads, *p, &[d]);
                }
            }
        }
    }
}
