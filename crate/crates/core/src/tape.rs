//! Reverse-mode differentiation over a flat tape of tensor primitives.
//!
//! Every primitive appends one node holding its output value. Nodes are only
//! ever appended after their inputs, so the node order is a topological order
//! and the backward pass is a single reverse sweep.
//!
//! Parameters are usually attached with [`Tape::leaf_ref`], which borrows the
//! tensor instead of copying it. Shape errors inside primitives are
//! programming errors and panic; callers validate user-facing shapes first.

use std::ops::Deref;
use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, softmax_unchecked, Tensor};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

enum Value<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

impl Deref for Value<'_> {
    type Target = Tensor;

    fn deref(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    VecMat(usize, usize),
    Add(usize, usize),
    AddRows(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Softmax(usize),
    Concat(Vec<usize>),
    Slice(usize, usize),
    Reshape(usize),
    Gather(usize, usize),
    Sum(usize),
    NegLogPick(usize, usize),
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
}

/// Ordered record of primitive operations.
pub struct Tape<'p> {
    id: u32,
    nodes: Vec<Node<'p>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::with_capacity(256) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value<'p>, op: Op) -> Var {
        let index = self.nodes.len() as u32;
        self.nodes.push(Node { value, op });
        Var { tape: self.id, index }
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable used on a foreign tape");
        v.index as usize
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Value::Owned(value), Op::Leaf)
    }

    pub fn leaf_ref(&mut self, value: &'p Tensor) -> Var {
        self.push(Value::Borrowed(value), Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.val(self.idx(v))
    }

    /// `a · b` for a matrix `a` and a vector or matrix `b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let (ma, mb) = (self.val(ia), self.val(ib));
        assert_eq!(ma.shape().len(), 2, "matmul: left operand must be a matrix");
        let (m, k) = (ma.shape()[0], ma.shape()[1]);
        let out = match mb.shape().len() {
            1 => {
                assert_eq!(mb.len(), k, "matmul: inner dimensions differ");
                let (ad, bd) = (ma.data(), mb.data());
                let data = (0..m).map(|i| dot(&ad[i * k..(i + 1) * k], bd)).collect();
                Tensor::vector(data)
            }
            2 => {
                assert_eq!(mb.shape()[0], k, "matmul: inner dimensions differ");
                let n = mb.shape()[1];
                let (ad, bd) = (ma.data(), mb.data());
                let mut data = vec![0.0; m * n];
                for i in 0..m {
                    let row = &mut data[i * n..(i + 1) * n];
                    for (kk, &aik) in ad[i * k..(i + 1) * k].iter().enumerate() {
                        axpy(aik, &bd[kk * n..(kk + 1) * n], row);
                    }
                }
                Tensor::new(vec![m, n], data).expect("matmul shape")
            }
            _ => panic!("matmul: right operand must be a vector or matrix"),
        };
        self.push(Value::Owned(out), Op::MatMul(ia, ib))
    }

    /// Row vector times matrix: `vᵀ M`.
    pub fn vecmat(&mut self, v: Var, m: Var) -> Var {
        let (iv, im) = (self.idx(v), self.idx(m));
        let (tv, tm) = (self.val(iv), self.val(im));
        assert_eq!(tm.shape().len(), 2, "vecmat: right operand must be a matrix");
        let (r, c) = (tm.shape()[0], tm.shape()[1]);
        assert_eq!(tv.len(), r, "vecmat: dimensions differ");
        let mut data = vec![0.0; c];
        for (i, &vi) in tv.data().iter().enumerate() {
            axpy(vi, tm.row(i), &mut data);
        }
        self.push(Value::Owned(Tensor::vector(data)), Op::VecMat(iv, im))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let (ta, tb) = (self.val(ia), self.val(ib));
        assert_eq!(ta.shape(), tb.shape(), "add: shapes differ");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("add shape");
        self.push(Value::Owned(out), Op::Add(ia, ib))
    }

    /// Adds vector `v` to every row of matrix `m`.
    pub fn add_rows(&mut self, m: Var, v: Var) -> Var {
        let (im, iv) = (self.idx(m), self.idx(v));
        let (tm, tv) = (self.val(im), self.val(iv));
        assert_eq!(tm.shape().len(), 2, "add_rows: left operand must be a matrix");
        let c = tm.shape()[1];
        assert_eq!(tv.len(), c, "add_rows: row length differs");
        let mut data = tm.data().to_vec();
        for row in data.chunks_mut(c) {
            for (x, y) in row.iter_mut().zip(tv.data()) {
                *x += y;
            }
        }
        let out = Tensor::new(tm.shape().to_vec(), data).expect("add_rows shape");
        self.push(Value::Owned(out), Op::AddRows(im, iv))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let (ta, tb) = (self.val(ia), self.val(ib));
        assert_eq!(ta.shape(), tb.shape(), "mul: shapes differ");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("mul shape");
        self.push(Value::Owned(out), Op::Mul(ia, ib))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let ia = self.idx(a);
        let t = self.val(ia);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * factor).collect())
            .expect("scale shape");
        self.push(Value::Owned(out), Op::Scale(ia, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let out = map(self.val(ia), f64::tanh);
        self.push(Value::Owned(out), Op::Tanh(ia))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let out = map(self.val(ia), sigmoid);
        self.push(Value::Owned(out), Op::Sigmoid(ia))
    }

    /// Softmax over a vector.
    pub fn softmax(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let t = self.val(ia);
        assert_eq!(t.shape().len(), 1, "softmax: vector expected");
        let out = Tensor::vector(softmax_unchecked(t.data()));
        self.push(Value::Owned(out), Op::Softmax(ia))
    }

    /// Concatenates the flattened inputs into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat: no inputs");
        let idx: Vec<usize> = parts.iter().map(|&v| self.idx(v)).collect();
        let total = idx.iter().map(|&i| self.val(i).len()).sum();
        let mut data = Vec::with_capacity(total);
        for &i in &idx {
            data.extend_from_slice(self.val(i).data());
        }
        self.push(Value::Owned(Tensor::vector(data)), Op::Concat(idx))
    }

    /// Contiguous sub-vector `[offset, offset + len)`.
    pub fn slice(&mut self, a: Var, offset: usize, len: usize) -> Var {
        let ia = self.idx(a);
        let t = self.val(ia);
        assert_eq!(t.shape().len(), 1, "slice: vector expected");
        assert!(len > 0 && offset + len <= t.len(), "slice out of range");
        let out = Tensor::vector(t.data()[offset..offset + len].to_vec());
        self.push(Value::Owned(out), Op::Slice(ia, offset))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let ia = self.idx(a);
        let out = self.val(ia).clone().reshaped(shape.to_vec()).expect("reshape size");
        self.push(Value::Owned(out), Op::Reshape(ia))
    }

    /// Row `row` of a matrix (embedding lookup).
    pub fn gather(&mut self, table: Var, row: usize) -> Var {
        let it = self.idx(table);
        let t = self.val(it);
        assert_eq!(t.shape().len(), 2, "gather: matrix expected");
        assert!(row < t.rows(), "gather: row out of range");
        let out = Tensor::vector(t.row(row).to_vec());
        self.push(Value::Owned(out), Op::Gather(it, row))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let s = self.val(ia).data().iter().sum();
        self.push(Value::Owned(Tensor::scalar(s)), Op::Sum(ia))
    }

    /// `-ln p[index]` for a probability vector `p`.
    pub fn neg_log_pick(&mut self, probs: Var, index: usize) -> Var {
        let ip = self.idx(probs);
        let t = self.val(ip);
        assert_eq!(t.shape().len(), 1, "neg_log_pick: vector expected");
        let v = -t.data()[index].ln();
        self.push(Value::Owned(Tensor::scalar(v)), Op::NegLogPick(ip, index))
    }

    /// d`loss`/d`v` for every `v` in `wrt`; variables the loss does not depend
    /// on receive zeros.
    pub fn gradient(&self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        if loss.tape != self.id || wrt.iter().any(|v| v.tape != self.id) {
            return Err(Error::Disconnected);
        }
        let root = loss.index as usize;
        if root >= self.nodes.len() {
            return Err(Error::Disconnected);
        }
        if self.val(root).len() != 1 {
            return Err(Error::Shape("gradient requires a scalar loss".into()));
        }
        if !self.val(root).is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let grads = self.backward(root);
        Ok(wrt
            .iter()
            .map(|v| {
                let i = v.index as usize;
                let shape = self.val(i).shape().to_vec();
                match &grads[i] {
                    Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
                    None => Tensor::zeros(&shape),
                }
            })
            .collect())
    }

    fn backward(&self, root: usize) -> Vec<Option<Vec<f64>>> {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        grads[root] = Some(vec![1.0]);
        for i in (0..=root).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let out = &*node.value;
            match node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.val(a), self.val(b));
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    if tb.shape().len() == 1 {
                        let ga = slot(&mut grads, a, m * k);
                        for i in 0..m {
                            axpy(g[i], tb.data(), &mut ga[i * k..(i + 1) * k]);
                        }
                        let gb = slot(&mut grads, b, k);
                        for i in 0..m {
                            axpy(g[i], &ta.data()[i * k..(i + 1) * k], gb);
                        }
                    } else {
                        let n = tb.shape()[1];
                        let ga = slot(&mut grads, a, m * k);
                        for i in 0..m {
                            let gi = &g[i * n..(i + 1) * n];
                            for kk in 0..k {
                                ga[i * k + kk] += dot(gi, &tb.data()[kk * n..(kk + 1) * n]);
                            }
                        }
                        let gb = slot(&mut grads, b, k * n);
                        for i in 0..m {
                            let gi = &g[i * n..(i + 1) * n];
                            for kk in 0..k {
                                axpy(ta.data()[i * k + kk], gi, &mut gb[kk * n..(kk + 1) * n]);
                            }
                        }
                    }
                }
                Op::VecMat(v, m) => {
                    let (tv, tm) = (self.val(v), self.val(m));
                    let (r, c) = (tm.shape()[0], tm.shape()[1]);
                    let gv = slot(&mut grads, v, r);
                    for i in 0..r {
                        gv[i] += dot(tm.row(i), &g);
                    }
                    let gm = slot(&mut grads, m, r * c);
                    for (i, &vi) in tv.data().iter().enumerate() {
                        axpy(vi, &g, &mut gm[i * c..(i + 1) * c]);
                    }
                }
                Op::Add(a, b) => {
                    axpy(1.0, &g, slot(&mut grads, a, g.len()));
                    axpy(1.0, &g, slot(&mut grads, b, g.len()));
                }
                Op::AddRows(m, v) => {
                    axpy(1.0, &g, slot(&mut grads, m, g.len()));
                    let c = self.val(v).len();
                    let gv = slot(&mut grads, v, c);
                    for row in g.chunks(c) {
                        axpy(1.0, row, gv);
                    }
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.val(a).data(), self.val(b).data());
                    let ga = slot(&mut grads, a, g.len());
                    for j in 0..g.len() {
                        ga[j] += g[j] * tb[j];
                    }
                    let gb = slot(&mut grads, b, g.len());
                    for j in 0..g.len() {
                        gb[j] += g[j] * ta[j];
                    }
                }
                Op::Scale(a, f) => axpy(f, &g, slot(&mut grads, a, g.len())),
                Op::Tanh(a) => {
                    let ga = slot(&mut grads, a, g.len());
                    for (j, y) in out.data().iter().enumerate() {
                        ga[j] += g[j] * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = slot(&mut grads, a, g.len());
                    for (j, y) in out.data().iter().enumerate() {
                        ga[j] += g[j] * y * (1.0 - y);
                    }
                }
                Op::Softmax(a) => {
                    let y = out.data();
                    let gy = dot(&g, y);
                    let ga = slot(&mut grads, a, g.len());
                    for j in 0..g.len() {
                        ga[j] += y[j] * (g[j] - gy);
                    }
                }
                Op::Concat(ref parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.val(p).len();
                        axpy(1.0, &g[offset..offset + n], slot(&mut grads, p, n));
                        offset += n;
                    }
                }
                Op::Slice(a, offset) => {
                    let n = self.val(a).len();
                    let ga = slot(&mut grads, a, n);
                    axpy(1.0, &g, &mut ga[offset..offset + g.len()]);
                }
                Op::Reshape(a) => axpy(1.0, &g, slot(&mut grads, a, g.len())),
                Op::Gather(t, row) => {
                    let tt = self.val(t);
                    let c = tt.cols();
                    let gt = slot(&mut grads, t, tt.len());
                    axpy(1.0, &g, &mut gt[row * c..(row + 1) * c]);
                }
                Op::Sum(a) => {
                    let n = self.val(a).len();
                    slot(&mut grads, a, n).iter_mut().for_each(|x| *x += g[0]);
                }
                Op::NegLogPick(p, index) => {
                    let tp = self.val(p);
                    let pi = tp.data()[index];
                    slot(&mut grads, p, tp.len())[index] -= g[0] / pi;
                }
            }
        }
        grads
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut [f64] {
    grads[i].get_or_insert_with(|| vec![0.0; len])
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect()).expect("map shape")
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
