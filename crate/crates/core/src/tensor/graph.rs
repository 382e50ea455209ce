use std::cell::{Ref, RefCell};

use super::{matmul_into, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation tag of a graph node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Matmul,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Scale,
    Offset,
    Concat,
    SliceCols,
    SliceRows,
    Mse,
    Softmax,
    Sum,
    Mean,
    Conv1d,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Matmul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Scale(Var, T),
    Offset(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Mse(Var, Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    Conv1d {
        input: Var,
        kernel: Var,
        seq_len: usize,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Matmul(..) => OpKind::Matmul,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::Scale(..) => OpKind::Scale,
            Op::Offset(_) => OpKind::Offset,
            Op::Concat(_) => OpKind::Concat,
            Op::SliceCols(..) => OpKind::SliceCols,
            Op::SliceRows(..) => OpKind::SliceRows,
            Op::Mse(..) => OpKind::Mse,
            Op::Softmax(_) => OpKind::Softmax,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::Conv1d { .. } => OpKind::Conv1d,
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) | Op::Mse(a, b) => {
                vec![*a, *b]
            }
            Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Scale(a, _)
            | Op::Offset(a)
            | Op::SliceCols(a, _)
            | Op::SliceRows(a, _)
            | Op::Softmax(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::Concat(vs) => vs.clone(),
            Op::Conv1d { input, kernel, .. } => vec![*input, *kernel],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Eagerly evaluated computation graph recording every operation for a
/// reverse sweep. Nodes are appended in creation order, which is a
/// topological order of the DAG.
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// ∂root/∂node for every node of a graph, produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<[usize; 2]>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when the node does not influence the root.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero-filled when `v` does not influence the root.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

#[inline]
fn at<T: Scalar>(t: &Tensor<T>, r: usize, c: usize) -> T {
    let rr = if t.rows() == 1 { 0 } else { r };
    let cc = if t.cols() == 1 { 0 } else { c };
    t.data()[rr * t.cols() + cc]
}

fn broadcast_binary<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::new(a.rows(), a.cols(), data);
    }
    let rows = broadcast_dim(a.rows(), b.rows());
    let cols = broadcast_dim(a.cols(), b.cols());
    match (rows, cols) {
        (Some(r), Some(c)) => Ok(Tensor::from_fn(r, c, |i, j| f(at(a, i, j), at(b, i, j)))),
        _ => Err(Error::shape(op, a.shape(), b.shape())),
    }
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to<T: Scalar>(g: Tensor<T>, shape: [usize; 2]) -> Tensor<T> {
    if g.shape() == shape {
        return g;
    }
    let mut out = Tensor::zeros(shape[0], shape[1]);
    for r in 0..g.rows() {
        for c in 0..g.cols() {
            let rr = if shape[0] == 1 { 0 } else { r };
            let cc = if shape[1] == 1 { 0 } else { c };
            let v = out.get(rr, cc) + g.get(r, c);
            out.set(rr, cc, v);
        }
    }
    out
}

/// `out (n×m) += a (n×k) · bᵀ` where `b` is `m×k`.
fn matmul_nt_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * m + j] += acc;
        }
    }
}

/// `out (k×m) += aᵀ · b` where `a` is `n×k` and `b` is `n×m`.
fn matmul_tn_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let b_row = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let out_row = &mut out[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    let cols = x.cols();
    for row in out.data_mut().chunks_mut(cols.max(1)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn conv1d_forward<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    seq_len: usize,
) -> Result<(Tensor<T>, usize, usize)> {
    let channels = x.cols();
    if seq_len == 0 || x.rows() % seq_len != 0 || channels == 0 || k.rows() % channels != 0 {
        return Err(Error::shape("conv1d", x.shape(), k.shape()));
    }
    let width = k.rows() / channels;
    let pad = width / 2;
    if width % 2 == 0 || width > seq_len + 2 * pad {
        return Err(Error::shape("conv1d", x.shape(), k.shape()));
    }
    let batch = x.rows() / seq_len;
    let filters = k.cols();
    let mut out = Tensor::zeros(x.rows(), filters);
    let block_in = batch * channels;
    let block_out = batch * filters;
    for t in 0..seq_len {
        for j in 0..width {
            let Some(s) = (t + j).checked_sub(pad).filter(|&s| s < seq_len) else {
                continue;
            };
            matmul_into(
                &x.data()[s * block_in..(s + 1) * block_in],
                &k.data()[j * channels * filters..(j + 1) * channels * filters],
                &mut out.data_mut()[t * block_out..(t + 1) * block_out],
                batch,
                channels,
                filters,
            );
        }
    }
    Ok((out, width, batch))
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    fn val(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    /// Records a tensor as a leaf (parameter, input or constant).
    pub fn leaf(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        self.val(v).clone()
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.val(v).shape()
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes.borrow()[v.0].op.kind()
    }

    pub fn parents(&self, v: Var) -> Vec<Var> {
        self.nodes.borrow()[v.0].op.parents()
    }

    /// Value of a `1 × 1` node.
    pub fn item(&self, v: Var) -> Result<T> {
        self.val(v).item()
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_binary("add", &self.val(a), &self.val(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_binary("sub", &self.val(a), &self.val(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product with 2-D broadcasting.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_binary("mul", &self.val(a), &self.val(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a).matmul(&self.val(b))?;
        Ok(self.push(out, Op::Matmul(a, b)))
    }

    pub fn tanh(&self, a: Var) -> Var {
        let out = self.val(a).map(T::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let out = self.val(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        let out = self.val(a).map(T::exp);
        if !out.all_finite() {
            return Err(Error::Contract(
                "exp overflowed to a non-finite value".into(),
            ));
        }
        Ok(self.push(out, Op::Exp(a)))
    }

    pub fn log(&self, a: Var) -> Result<Var> {
        let out = self.val(a).map(T::ln);
        if !out.all_finite() {
            return Err(Error::Contract("log of a non-positive value".into()));
        }
        Ok(self.push(out, Op::Log(a)))
    }

    /// Multiplies by a constant.
    pub fn scale(&self, a: Var, k: T) -> Var {
        let out = self.val(a).map(|x| x * k);
        self.push(out, Op::Scale(a, k))
    }

    /// Adds a constant.
    pub fn offset(&self, a: Var, k: T) -> Var {
        let out = self.val(a).map(|x| x + k);
        self.push(out, Op::Offset(a))
    }

    /// Concatenates along columns; all parts need the same row count.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat of zero tensors".into()));
        };
        let rows = self.shape(first)[0];
        let out = {
            let nodes = self.nodes.borrow();
            let mut cols = 0;
            for &p in parts {
                let s = nodes[p.0].value.shape();
                if s[0] != rows {
                    return Err(Error::shape("concat", nodes[first.0].value.shape(), s));
                }
                cols += s[1];
            }
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for &p in parts {
                    data.extend_from_slice(nodes[p.0].value.row(r));
                }
            }
            Tensor::new(rows, cols, data)?
        };
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        let out = {
            let x = self.val(a);
            if start >= end || end > x.cols() {
                return Err(Error::shape("slice_cols", x.shape(), [start, end]));
            }
            Tensor::from_fn(x.rows(), end - start, |r, c| x.get(r, start + c))
        };
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        let out = {
            let x = self.val(a);
            if start >= end || end > x.rows() {
                return Err(Error::shape("slice_rows", x.shape(), [start, end]));
            }
            let c = x.cols();
            Tensor::new(end - start, c, x.data()[start * c..end * c].to_vec())?
        };
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    /// Mean squared difference over all entries, as a `1 × 1` node.
    pub fn mse(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let (x, y) = (self.val(a), self.val(b));
            if x.shape() != y.shape() || x.is_empty() {
                return Err(Error::shape("mse", x.shape(), y.shape()));
            }
            let total: T = x
                .data()
                .iter()
                .zip(y.data())
                .map(|(&p, &q)| (p - q) * (p - q))
                .sum();
            Tensor::scalar(total / T::of(x.len() as f64))
        };
        Ok(self.push(out, Op::Mse(a, b)))
    }

    /// Row-wise softmax.
    pub fn softmax(&self, a: Var) -> Var {
        let out = softmax_rows(&self.val(a));
        self.push(out, Op::Softmax(a))
    }

    pub fn sum(&self, a: Var) -> Var {
        let out = Tensor::scalar(self.val(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        let out = {
            let x = self.val(a);
            Tensor::scalar(x.sum() / T::of(x.len() as f64))
        };
        self.push(out, Op::Mean(a))
    }

    /// Same-padded stride-1 cross-correlation along time.
    ///
    /// `input` is time-major `[seq_len·B, C]` (row `t·B + b` holds sample `b`
    /// at step `t`); `kernel` is `[k·C, F]` with row `j·C + c` holding tap `j`
    /// of channel `c`. The output is `[seq_len·B, F]` in the same layout.
    pub fn conv1d(&self, input: Var, kernel: Var, seq_len: usize) -> Result<Var> {
        let (out, _, _) = conv1d_forward(&self.val(input), &self.val(kernel), seq_len)?;
        Ok(self.push(
            out,
            Op::Conv1d {
                input,
                kernel,
                seq_len,
            },
        ))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if root.0 >= nodes.len() {
            return Err(Error::Contract(format!("unknown node {}", root.0)));
        }
        if nodes[root.0].value.shape() != [1, 1] {
            return Err(Error::Contract(format!(
                "backward requires a scalar root, got shape {:?}",
                nodes[root.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(T::one()));

        let accumulate =
            |grads: &mut Vec<Option<Tensor<T>>>, v: Var, g: Tensor<T>| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            };

        for idx in (0..=root.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &nodes[idx];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                    accumulate(&mut grads, *b, reduce_to(gout.clone(), sb));
                    accumulate(&mut grads, *a, reduce_to(gout.clone(), sa));
                }
                Op::Sub(a, b) => {
                    let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                    accumulate(&mut grads, *b, reduce_to(gout.map(|x| -x), sb));
                    accumulate(&mut grads, *a, reduce_to(gout.clone(), sa));
                }
                Op::Mul(a, b) => {
                    let (xa, xb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let ga = Tensor::from_fn(gout.rows(), gout.cols(), |r, c| {
                        gout.get(r, c) * at(xb, r, c)
                    });
                    let gb = Tensor::from_fn(gout.rows(), gout.cols(), |r, c| {
                        gout.get(r, c) * at(xa, r, c)
                    });
                    accumulate(&mut grads, *b, reduce_to(gb, xb.shape()));
                    accumulate(&mut grads, *a, reduce_to(ga, xa.shape()));
                }
                Op::Matmul(a, b) => {
                    let (xa, xb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (n, k, m) = (xa.rows(), xa.cols(), xb.cols());
                    let mut ga = Tensor::zeros(n, k);
                    matmul_nt_into(gout.data(), xb.data(), ga.data_mut(), n, m, k);
                    let mut gb = Tensor::zeros(k, m);
                    matmul_tn_into(xa.data(), gout.data(), gb.data_mut(), n, k, m);
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let g = zip_map(&gout, out, |g, y| g * (T::one() - y * y));
                    accumulate(&mut grads, *a, g);
                }
                Op::Sigmoid(a) => {
                    let g = zip_map(&gout, out, |g, y| g * y * (T::one() - y));
                    accumulate(&mut grads, *a, g);
                }
                Op::Exp(a) => {
                    let g = zip_map(&gout, out, |g, y| g * y);
                    accumulate(&mut grads, *a, g);
                }
                Op::Log(a) => {
                    let g = zip_map(&gout, &nodes[a.0].value, |g, x| g / x);
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    accumulate(&mut grads, *a, gout.map(|g| g * k));
                }
                Op::Offset(a) => accumulate(&mut grads, *a, gout.clone()),
                Op::Concat(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = nodes[p.0].value.cols();
                        let g = Tensor::from_fn(gout.rows(), w, |r, c| gout.get(r, col + c));
                        accumulate(&mut grads, p, g);
                        col += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let [r, c] = nodes[a.0].value.shape();
                    let mut g = Tensor::zeros(r, c);
                    for i in 0..gout.rows() {
                        for j in 0..gout.cols() {
                            g.set(i, start + j, gout.get(i, j));
                        }
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::SliceRows(a, start) => {
                    let [r, c] = nodes[a.0].value.shape();
                    let mut g = Tensor::zeros(r, c);
                    g.data_mut()[start * c..start * c + gout.len()].copy_from_slice(gout.data());
                    accumulate(&mut grads, *a, g);
                }
                Op::Mse(a, b) => {
                    let (xa, xb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let k = gout.data()[0] * T::of(2.0) / T::of(xa.len() as f64);
                    let ga = zip_map(xa, xb, |p, q| k * (p - q));
                    accumulate(&mut grads, *b, ga.map(|x| -x));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let mut g = Tensor::zeros(out.rows(), out.cols());
                    for r in 0..out.rows() {
                        let (y, gy) = (out.row(r), gout.row(r));
                        let dot: T = y.iter().zip(gy).map(|(&p, &q)| p * q).sum();
                        for c in 0..out.cols() {
                            g.set(r, c, y[c] * (gy[c] - dot));
                        }
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Sum(a) => {
                    let [r, c] = nodes[a.0].value.shape();
                    accumulate(&mut grads, *a, Tensor::filled(r, c, gout.data()[0]));
                }
                Op::Mean(a) => {
                    let [r, c] = nodes[a.0].value.shape();
                    let k = gout.data()[0] / T::of((r * c) as f64);
                    accumulate(&mut grads, *a, Tensor::filled(r, c, k));
                }
                Op::Conv1d {
                    input,
                    kernel,
                    seq_len,
                } => {
                    let (x, kern) = (&nodes[input.0].value, &nodes[kernel.0].value);
                    let channels = x.cols();
                    let filters = kern.cols();
                    let width = kern.rows() / channels;
                    let pad = width / 2;
                    let batch = x.rows() / seq_len;
                    let (block_in, block_out, block_k) =
                        (batch * channels, batch * filters, channels * filters);
                    let mut gx = Tensor::zeros(x.rows(), channels);
                    let mut gk = Tensor::zeros(kern.rows(), filters);
                    for t in 0..*seq_len {
                        let g_blk = &gout.data()[t * block_out..(t + 1) * block_out];
                        for j in 0..width {
                            let Some(s) = (t + j).checked_sub(pad).filter(|s| s < seq_len) else {
                                continue;
                            };
                            matmul_nt_into(
                                g_blk,
                                &kern.data()[j * block_k..(j + 1) * block_k],
                                &mut gx.data_mut()[s * block_in..(s + 1) * block_in],
                                batch,
                                filters,
                                channels,
                            );
                            matmul_tn_into(
                                &x.data()[s * block_in..(s + 1) * block_in],
                                g_blk,
                                &mut gk.data_mut()[j * block_k..(j + 1) * block_k],
                                batch,
                                channels,
                                filters,
                            );
                        }
                    }
                    accumulate(&mut grads, *kernel, gk);
                    accumulate(&mut grads, *input, gx);
                }
            }
            grads[idx] = Some(gout);
        }

        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        grads.resize(nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.rows(), a.cols(), data).expect("matching shapes")
}
