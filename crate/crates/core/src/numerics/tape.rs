//! Reverse-mode tape.
//!
//! Every forward op appends a node holding its value and the handles of its
//! parents, so node indices are already a topological order and the backward
//! sweep is a single reverse pass.

use super::gru::{self, GruCache};
use super::tensor::{gemm_acc, Tensor};
use super::NumericsError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Expit(Var),
    Tanh(Var),
    Log(Var),
    Exp(Var),
    Relu(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    MeanAxis(Var, usize),
    Softmax(Var, usize),
    L2Norm(Var),
    Concat(Vec<Var>, usize),
    SliceRows(Var, usize),
    ScaleRows(Var, Var),
    TileRows(Var),
    PairwiseDist(Var, Var),
    Gru(Box<GruCache>),
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Shift(_) => "shift",
            Op::Expit(_) => "expit",
            Op::Tanh(_) => "tanh",
            Op::Log(_) => "log",
            Op::Exp(_) => "exp",
            Op::Relu(_) => "relu",
            Op::Clamp(..) => "clamp",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::MeanAxis(..) => "mean_axis",
            Op::Softmax(..) => "softmax",
            Op::L2Norm(_) => "l2_norm",
            Op::Concat(..) => "concat",
            Op::SliceRows(..) => "slice_rows",
            Op::ScaleRows(..) => "scale_rows",
            Op::TileRows(_) => "tile_rows",
            Op::PairwiseDist(..) => "pairwise_dist",
            Op::Gru(_) => "gru",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, or `None` when `v` does not influence the root.
    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Drops every node at index `len` and above; their handles become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn op_kind(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.kind()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> NumericsError {
        NumericsError::ShapeMismatch {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives an adjoint.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n, out_shape) = match (sa.len(), sb.len()) {
            (2, 2) if sa[1] == sb[0] => (sa[0], sa[1], sb[1], vec![sa[0], sb[1]]),
            (2, 1) if sa[1] == sb[0] => (sa[0], sa[1], 1, vec![sa[0]]),
            _ => return Err(self.mismatch("matmul", a, b)),
        };
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Tensor::new(out_shape, out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        if self.shape(a).len() != 2 {
            return Err(NumericsError::Rank {
                op: "transpose",
                shape: self.shape(a).to_vec(),
            });
        }
        let value = self.value(a).transpose();
        let ng = self.ng(a);
        Ok(self.push(value, Op::Transpose(a), ng))
    }

    /// `rhs` must match `lhs` or `lhs.shape[1..]` (broadcast over the leading axis).
    fn broadcast_ok(&self, a: Var, b: Var) -> bool {
        let (sa, sb) = (self.shape(a), self.shape(b));
        sa == sb || (!sa.is_empty() && &sa[1..] == sb)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericsError> {
        if !self.broadcast_ok(a, b) {
            return Err(self.mismatch(name, a, b));
        }
        let va = self.value(a);
        let vb = self.value(b).data();
        let period = vb.len();
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, vb[i % period]))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(value, op, ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| s * x, Op::Scale(a, s))
    }

    /// Adds a constant to every entry.
    pub fn shift(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::Shift(a))
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.shift(neg, 1.0)
    }

    pub fn expit(&mut self, a: Var) -> Var {
        self.unary(a, expit, Op::Expit(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Tensor::scalar(v.sum() / v.numel() as f64);
        let ng = self.ng(a);
        self.push(value, Op::Mean(a), ng)
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<(), NumericsError> {
        let s = self.shape(a);
        if s.is_empty() || s.len() > 2 || axis >= s.len() {
            return Err(NumericsError::Axis {
                op,
                shape: s.to_vec(),
                axis,
            });
        }
        Ok(())
    }

    /// Mean of a rank-2 tensor along `axis` (0 → per column, 1 → per row).
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        if self.shape(a).len() != 2 || axis > 1 {
            return Err(NumericsError::Axis {
                op: "mean_axis",
                shape: self.shape(a).to_vec(),
                axis,
            });
        }
        let v = self.value(a);
        let (r, c) = (v.rows(), v.cols());
        let value = if axis == 0 {
            let mut out = vec![0.0; c];
            for i in 0..r {
                for (o, x) in out.iter_mut().zip(v.row(i)) {
                    *o += x;
                }
            }
            out.iter_mut().for_each(|o| *o /= r as f64);
            Tensor::vector(out)
        } else {
            Tensor::vector((0..r).map(|i| v.row(i).iter().sum::<f64>() / c as f64).collect())
        };
        let ng = self.ng(a);
        Ok(self.push(value, Op::MeanAxis(a, axis), ng))
    }

    /// Numerically stable softmax along `axis` of a rank-1 or rank-2 tensor.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        self.check_axis("softmax", a, axis)?;
        let v = self.value(a);
        let mut out = v.data().to_vec();
        for_each_lane(v.shape(), axis, |idx| {
            let m = idx.clone().map(|i| out[i]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for i in idx.clone() {
                out[i] = (out[i] - m).exp();
                z += out[i];
            }
            for i in idx {
                out[i] /= z;
            }
        });
        let value = Tensor::new(v.shape().to_vec(), out)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::Softmax(a, axis), ng))
    }

    /// Euclidean norm over the last axis: rank 1 → scalar, rank 2 → one norm per row.
    /// The gradient at a zero vector is defined as zero.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var, NumericsError> {
        let v = self.value(a);
        let value = match v.rank() {
            1 => Tensor::scalar(v.norm()),
            2 => Tensor::vector(
                (0..v.rows())
                    .map(|r| v.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
                    .collect(),
            ),
            _ => {
                return Err(NumericsError::Rank {
                    op: "l2_norm",
                    shape: v.shape().to_vec(),
                })
            }
        };
        let ng = self.ng(a);
        Ok(self.push(value, Op::L2Norm(a), ng))
    }

    /// Concatenation of rank-1 tensors (axis 0) or rank-2 tensors along `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, NumericsError> {
        let first = *parts.first().ok_or(NumericsError::Empty { op: "concat" })?;
        self.check_axis("concat", first, axis)?;
        let s0 = self.shape(first).to_vec();
        for &p in &parts[1..] {
            let s = self.shape(p);
            let ok = s.len() == s0.len()
                && s.iter()
                    .zip(&s0)
                    .enumerate()
                    .all(|(ax, (a, b))| ax == axis || a == b);
            if !ok {
                return Err(self.mismatch("concat", first, p));
            }
        }
        let value = if s0.len() == 1 || axis == 0 {
            let mut data = Vec::new();
            let mut lead = 0;
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
                lead += self.shape(p)[0];
            }
            let mut shape = s0.clone();
            shape[0] = lead;
            Tensor::new(shape, data)?
        } else {
            let rows = s0[0];
            let total: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(r));
                }
            }
            Tensor::matrix(rows, total, data)
        };
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), ng))
    }

    /// Rows `start..end` of a rank-2 tensor, or entries of a rank-1 tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let s = self.shape(a).to_vec();
        if s.is_empty() || s.len() > 2 || start > end || end > s[0] {
            return Err(NumericsError::Slice {
                shape: s,
                start,
                end,
            });
        }
        let width = if s.len() == 2 { s[1] } else { 1 };
        let data = self.value(a).data()[start * width..end * width].to_vec();
        let mut shape = s;
        shape[0] = end - start;
        let value = Tensor::new(shape, data)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::SliceRows(a, start), ng))
    }

    /// `out[i, :] = m[i, :] * v[i]`
    pub fn scale_rows(&mut self, m: Var, v: Var) -> Result<Var, NumericsError> {
        let (sm, sv) = (self.shape(m), self.shape(v));
        if sm.len() != 2 || sv.len() != 1 || sm[0] != sv[0] {
            return Err(self.mismatch("scale_rows", m, v));
        }
        let mv = self.value(m);
        let vv = self.value(v).data();
        let c = mv.cols();
        let data = mv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * vv[i / c])
            .collect();
        let value = Tensor::new(sm.to_vec(), data)?;
        let ng = self.ng(m) || self.ng(v);
        Ok(self.push(value, Op::ScaleRows(m, v), ng))
    }

    /// Stacks a rank-1 tensor `n` times into an `n x len` matrix.
    pub fn tile_rows(&mut self, a: Var, n: usize) -> Result<Var, NumericsError> {
        let s = self.shape(a);
        if s.len() != 1 {
            return Err(NumericsError::Rank {
                op: "tile_rows",
                shape: s.to_vec(),
            });
        }
        let row = self.value(a).data();
        let mut data = Vec::with_capacity(n * row.len());
        for _ in 0..n {
            data.extend_from_slice(row);
        }
        let value = Tensor::matrix(n, row.len(), data);
        let ng = self.ng(a);
        Ok(self.push(value, Op::TileRows(a), ng))
    }

    /// Euclidean distances between every row of `a` (`n x k`) and every row of `b` (`m x k`).
    pub fn pairwise_dist(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(self.mismatch("pairwise_dist", a, b));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let (n, m) = (va.rows(), vb.rows());
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let ra = va.row(i);
            for j in 0..m {
                let d2: f64 = ra.iter().zip(vb.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
                out.push(d2.sqrt());
            }
        }
        let value = Tensor::matrix(n, m, out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::PairwiseDist(a, b), ng))
    }

    /// Single-direction GRU over the rows of `x` (`T x in`) from a zero state.
    ///
    /// Gate rows of the weights are ordered (reset, update, candidate):
    /// `r = σ(W_r x + b_ir + U_r h + b_hr)`, `z` likewise,
    /// `n = tanh(W_n x + b_in + r ⊙ (U_n h + b_hn))`, `h' = (1 − z) ⊙ n + z ⊙ h`.
    /// With `reverse` the sequence is consumed from the last row; output row
    /// `t` is always the hidden state after consuming input row `t`.
    pub fn gru(
        &mut self,
        x: Var,
        w_ih: Var,
        w_hh: Var,
        b_ih: Var,
        b_hh: Var,
        reverse: bool,
    ) -> Result<Var, NumericsError> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w_ih).to_vec();
        let su = self.shape(w_hh).to_vec();
        if sx.len() != 2 || sw.len() != 2 || sw[1] != sx[1] || sw[0] % 3 != 0 {
            return Err(self.mismatch("gru", x, w_ih));
        }
        let hidden = sw[0] / 3;
        if su != [3 * hidden, hidden] {
            return Err(self.mismatch("gru", w_ih, w_hh));
        }
        if self.shape(b_ih) != [3 * hidden] || self.shape(b_hh) != [3 * hidden] {
            return Err(self.mismatch("gru", w_ih, b_ih));
        }
        let (value, cache) = gru::forward(
            self.value(x),
            self.value(w_ih),
            self.value(w_hh),
            self.value(b_ih),
            self.value(b_hh),
            [x, w_ih, w_hh, b_ih, b_hh],
            reverse,
        );
        let ng = [x, w_ih, w_hh, b_ih, b_hh].iter().any(|&v| self.ng(v));
        Ok(self.push(value, Op::Gru(Box::new(cache)), ng))
    }

    /// Reverse sweep from a scalar `root`. Adjoints are freshly allocated on
    /// every call, so repeated calls return identical results.
    pub fn backward(&self, root: Var) -> Result<Gradients, NumericsError> {
        let rv = self.value(root);
        if rv.numel() != 1 {
            return Err(NumericsError::NonScalarRoot {
                shape: rv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Tensor::filled(rv.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Adjoint of a broadcast rhs: sum the incoming gradient over the leading axis.
    fn reduce_to(&self, g: &Tensor, target: Var) -> Tensor {
        let ts = self.shape(target);
        if g.shape() == ts {
            return g.clone();
        }
        let period: usize = ts.iter().product();
        let mut out = vec![0.0; period];
        for (i, x) in g.data().iter().enumerate() {
            out[i % period] += x;
        }
        Tensor::new(ts.to_vec(), out).expect("broadcast shape")
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.rows(), va.cols());
                let n = if vb.rank() == 2 { vb.cols() } else { 1 };
                if self.ng(*a) {
                    // dA = G Bᵀ
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g.data()[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let brow = &vb.data()[kk * n..(kk + 1) * n];
                            da[i * k + kk] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    self.acc(grads, *a, Tensor::new(va.shape().to_vec(), da).unwrap());
                }
                if self.ng(*b) {
                    // dB = Aᵀ G
                    let mut db = vec![0.0; k * n];
                    let at = va.transpose();
                    gemm_acc(at.data(), g.data(), &mut db, k, m, n);
                    self.acc(grads, *b, Tensor::new(vb.shape().to_vec(), db).unwrap());
                }
            }
            Op::Transpose(a) => self.acc(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                if self.ng(*b) {
                    let gb = self.reduce_to(g, *b);
                    self.acc(grads, *b, gb);
                }
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                if self.ng(*b) {
                    let gb = self.reduce_to(&g.map(|x| -x), *b);
                    self.acc(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let period = vb.numel();
                if self.ng(*a) {
                    let d = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, x)| x * vb.data()[i % period])
                        .collect();
                    self.acc(grads, *a, Tensor::new(va.shape().to_vec(), d).unwrap());
                }
                if self.ng(*b) {
                    let prod = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect(),
                    )
                    .unwrap();
                    let gb = self.reduce_to(&prod, *b);
                    self.acc(grads, *b, gb);
                }
            }
            Op::Scale(a, s) => self.acc(grads, *a, g.map(|x| x * s)),
            Op::Shift(a) => self.acc(grads, *a, g.clone()),
            Op::Expit(a) => self.acc(grads, *a, zip_map(g, y, |gi, yi| gi * yi * (1.0 - yi))),
            Op::Tanh(a) => self.acc(grads, *a, zip_map(g, y, |gi, yi| gi * (1.0 - yi * yi))),
            Op::Log(a) => {
                let d = zip_map(g, self.value(*a), |gi, xi| gi / xi);
                self.acc(grads, *a, d)
            }
            Op::Exp(a) => self.acc(grads, *a, zip_map(g, y, |gi, yi| gi * yi)),
            Op::Relu(a) => {
                let d = zip_map(g, self.value(*a), |gi, xi| if xi > 0.0 { gi } else { 0.0 });
                self.acc(grads, *a, d)
            }
            Op::Clamp(a, lo, hi) => {
                let d = zip_map(g, self.value(*a), |gi, xi| {
                    if xi >= *lo && xi <= *hi {
                        gi
                    } else {
                        0.0
                    }
                });
                self.acc(grads, *a, d)
            }
            Op::Sum(a) => {
                let gi = g.item();
                self.acc(grads, *a, Tensor::filled(self.shape(*a), gi))
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                let gi = g.item() / n;
                self.acc(grads, *a, Tensor::filled(self.shape(*a), gi))
            }
            Op::MeanAxis(a, axis) => {
                let va = self.value(*a);
                let (r, c) = (va.rows(), va.cols());
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] = if *axis == 0 {
                            g.data()[j] / r as f64
                        } else {
                            g.data()[i] / c as f64
                        };
                    }
                }
                self.acc(grads, *a, Tensor::matrix(r, c, d))
            }
            Op::Softmax(a, axis) => {
                let mut d = vec![0.0; y.numel()];
                for_each_lane(y.shape(), *axis, |idx| {
                    let dot: f64 = idx.clone().map(|i| g.data()[i] * y.data()[i]).sum();
                    for i in idx {
                        d[i] = y.data()[i] * (g.data()[i] - dot);
                    }
                });
                self.acc(grads, *a, Tensor::new(y.shape().to_vec(), d).unwrap())
            }
            Op::L2Norm(a) => {
                let va = self.value(*a);
                let c = va.cols();
                let d = va
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, x)| {
                        let r = i / c;
                        let norm = y.data()[r];
                        if norm > 0.0 {
                            g.data()[r] * x / norm
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.acc(grads, *a, Tensor::new(va.shape().to_vec(), d).unwrap())
            }
            Op::Concat(parts, axis) => {
                if y.rank() == 1 || *axis == 0 {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).numel();
                        let piece = g.data()[offset..offset + n].to_vec();
                        offset += n;
                        self.acc(grads, p, Tensor::new(self.shape(p).to_vec(), piece).unwrap());
                    }
                } else {
                    let rows = y.rows();
                    let mut col = 0;
                    for &p in parts {
                        let w = self.shape(p)[1];
                        let mut piece = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            piece.extend_from_slice(&g.row(r)[col..col + w]);
                        }
                        col += w;
                        self.acc(grads, p, Tensor::matrix(rows, w, piece));
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let sa = self.shape(*a);
                let width = if sa.len() == 2 { sa[1] } else { 1 };
                let mut d = Tensor::zeros(sa);
                d.data_mut()[start * width..start * width + g.numel()].copy_from_slice(g.data());
                self.acc(grads, *a, d)
            }
            Op::ScaleRows(m, v) => {
                let (vm, vv) = (self.value(*m), self.value(*v));
                let c = vm.cols();
                if self.ng(*m) {
                    let d = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, x)| x * vv.data()[i / c])
                        .collect();
                    self.acc(grads, *m, Tensor::new(vm.shape().to_vec(), d).unwrap());
                }
                if self.ng(*v) {
                    let d = (0..vm.rows())
                        .map(|r| g.row(r).iter().zip(vm.row(r)).map(|(a, b)| a * b).sum())
                        .collect();
                    self.acc(grads, *v, Tensor::vector(d));
                }
            }
            Op::TileRows(a) => {
                let c = y.cols();
                let mut d = vec![0.0; c];
                for r in 0..y.rows() {
                    for (o, x) in d.iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                self.acc(grads, *a, Tensor::vector(d))
            }
            Op::PairwiseDist(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, m, k) = (va.rows(), vb.rows(), va.cols());
                let mut da = vec![0.0; n * k];
                let mut db = vec![0.0; m * k];
                for i in 0..n {
                    for j in 0..m {
                        let dist = y.data()[i * m + j];
                        let gij = g.data()[i * m + j];
                        if dist <= 0.0 || gij == 0.0 {
                            continue;
                        }
                        let s = gij / dist;
                        for c in 0..k {
                            let diff = va.data()[i * k + c] - vb.data()[j * k + c];
                            da[i * k + c] += s * diff;
                            db[j * k + c] -= s * diff;
                        }
                    }
                }
                self.acc(grads, *a, Tensor::matrix(n, k, da));
                self.acc(grads, *b, Tensor::matrix(m, k, db));
            }
            Op::Gru(cache) => {
                let [x, w_ih, w_hh, _, _] = cache.inputs;
                let adj = gru::backward(cache, self.value(x), self.value(w_ih), self.value(w_hh), g);
                let [dx, dw_ih, dw_hh, db_ih, db_hh] = adj;
                for (v, d) in cache.inputs.iter().zip([dx, dw_ih, dw_hh, db_ih, db_hh]) {
                    self.acc(grads, *v, d);
                }
            }
        }
    }
}

fn zip_map(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::new(g.shape().to_vec(), data).unwrap()
}

/// Calls `f` with the flat indices of every lane along `axis`.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(std::iter::StepBy<std::ops::Range<usize>>)) {
    match (shape.len(), axis) {
        (1, _) => f((0..shape[0]).step_by(1)),
        (2, 0) => {
            let (r, c) = (shape[0], shape[1]);
            for j in 0..c {
                f((j..r * c).step_by(c));
            }
        }
        (2, _) => {
            let c = shape[1];
            for i in 0..shape[0] {
                f((i * c..(i + 1) * c).step_by(1));
            }
        }
        _ => unreachable!("axis validated by caller"),
    }
}
