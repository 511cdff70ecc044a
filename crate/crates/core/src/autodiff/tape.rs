//! Define-by-run reverse-mode tape.
//!
//! Every forward op appends a node holding its value and the indices of its
//! parents. Nodes are only ever appended, so the tape is topologically ordered
//! by construction and [`Tape::backward`] is a single reverse sweep that
//! visits each node once.

use super::array::RealArray;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MatMul(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Log(usize),
    Exp(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    Sum(usize),
    Scale(usize, f64),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows(usize, usize),
    MeanPoolRows(usize, usize),
    ReverseRows(usize),
    /// Scalar head with a precomputed gradient with respect to its parent.
    Head(usize, RealArray),
}

#[derive(Debug, Clone)]
struct Node {
    value: RealArray,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output with respect to every node on the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<RealArray>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; zeros when the output does not depend on it.
    pub fn get(&self, var: Var) -> RealArray {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => RealArray::zeros(&self.shapes[var.0]),
        }
    }

    pub fn reached(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }
}

fn same_shape(op: &'static str, a: &RealArray, b: &RealArray) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * m..(p + 1) * m];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
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

    pub fn value(&self, v: Var) -> &RealArray {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: RealArray, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: RealArray) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let mut out = x.clone();
        out.add_assign(y);
        Ok(self.push(out, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sub", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let out = RealArray::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Sub(a.0, b.0)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = RealArray::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a.0, b.0)))
    }

    /// Adds a `1 × m` row to every row of an `n × m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.len() != x.cols() || x.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: x.shape().to_vec(),
                rhs: r.shape().to_vec(),
            });
        }
        let cols = x.cols();
        let mut out = x.clone();
        for chunk in out.data_mut().chunks_mut(cols) {
            for (o, b) in chunk.iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a.0, row.0)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape().len() != 2 || y.shape().len() != 2 || x.shape()[1] != y.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        let (n, k, m) = (x.shape()[0], x.shape()[1], y.shape()[1]);
        let out = RealArray::new(vec![n, m], matmul_raw(x.data(), y.data(), n, k, m))?;
        Ok(self.push(out, Op::MatMul(a.0, b.0)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(out, Op::Sigmoid(a.0))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a.0))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).softmax_rows();
        self.push(out, Op::SoftmaxRows(a.0))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).log_softmax_rows();
        self.push(out, Op::LogSoftmaxRows(a.0))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        self.push(RealArray::scalar(total), Op::Sum(a.0))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|v| v * factor);
        self.push(out, Op::Scale(a.0, factor))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat_rows input"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            if v.cols() != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.value(*first).shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = RealArray::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.iter().map(|v| v.0).collect())))
    }

    /// Places matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat_cols input"))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for p in parts {
            let v = self.value(*p);
            if v.rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(*first).shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            cols += v.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let out = RealArray::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.iter().map(|v| v.0).collect())))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        if start >= end || end > x.rows() {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                lhs: x.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let cols = x.cols();
        let data = x.data()[start * cols..end * cols].to_vec();
        let out = RealArray::new(vec![end - start, cols], data)?;
        Ok(self.push(out, Op::SliceRows(a.0, start)))
    }

    /// Averages consecutive windows of `stride` rows; the last window may be shorter.
    pub fn mean_pool_rows(&mut self, a: Var, stride: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::InvalidArgument("pooling stride must be ≥ 1".into()));
        }
        let x = self.value(a);
        let (rows, cols) = (x.rows(), x.cols());
        let out_rows = rows.div_ceil(stride);
        let mut data = vec![0.0; out_rows * cols];
        for o in 0..out_rows {
            let lo = o * stride;
            let hi = (lo + stride).min(rows);
            let inv = 1.0 / (hi - lo) as f64;
            let dst = &mut data[o * cols..(o + 1) * cols];
            for r in lo..hi {
                for (d, v) in dst.iter_mut().zip(x.row_slice(r)) {
                    *d += v * inv;
                }
            }
        }
        let out = RealArray::new(vec![out_rows, cols], data)?;
        Ok(self.push(out, Op::MeanPoolRows(a.0, stride)))
    }

    pub fn reverse_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let cols = x.cols();
        let mut data = Vec::with_capacity(x.len());
        for r in (0..x.rows()).rev() {
            data.extend_from_slice(x.row_slice(r));
        }
        let out = RealArray::new(vec![x.rows(), cols], data).expect("same element count");
        self.push(out, Op::ReverseRows(a.0))
    }

    /// Records a scalar computed outside the tape (e.g. a dynamic-programming
    /// loss) together with its gradient with respect to `input`.
    pub fn head(&mut self, input: Var, value: f64, grad: RealArray) -> Result<Var> {
        same_shape("head", self.value(input), &grad)?;
        Ok(self.push(RealArray::scalar(value), Op::Head(input.0, grad)))
    }

    /// Reverse sweep from a scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_value = self.value(output);
        if !out_value.is_scalar() {
            return Err(Error::NonScalarOutput(out_value.shape().to_vec()));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<RealArray>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(RealArray::filled(out_value.shape(), 1.0));

        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (x, y) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    accumulate(&mut grads, *a, &zip_map(&g, y, |p, q| p * q));
                    accumulate(&mut grads, *b, &zip_map(&g, x, |p, q| p * q));
                }
                Op::AddRow(a, r) => {
                    accumulate(&mut grads, *a, &g);
                    let cols = g.cols();
                    let mut col_sum = vec![0.0; cols];
                    for chunk in g.data().chunks(cols) {
                        for (s, v) in col_sum.iter_mut().zip(chunk) {
                            *s += v;
                        }
                    }
                    let shape = self.nodes[*r].value.shape().to_vec();
                    accumulate(&mut grads, *r, &RealArray::new(shape, col_sum)?);
                }
                Op::MatMul(a, b) => {
                    let (x, y) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (rows, inner, cols) = (x.shape()[0], x.shape()[1], y.shape()[1]);
                    // dA = G · Bᵀ
                    let mut ga = vec![0.0; rows * inner];
                    for i in 0..rows {
                        let g_row = &g.data()[i * cols..(i + 1) * cols];
                        for p in 0..inner {
                            let y_row = &y.data()[p * cols..(p + 1) * cols];
                            ga[i * inner + p] =
                                g_row.iter().zip(y_row).map(|(u, v)| u * v).sum();
                        }
                    }
                    // dB = Aᵀ · G
                    let mut gb = vec![0.0; inner * cols];
                    for i in 0..rows {
                        let g_row = &g.data()[i * cols..(i + 1) * cols];
                        for p in 0..inner {
                            let xv = x.data()[i * inner + p];
                            if xv == 0.0 {
                                continue;
                            }
                            for (o, gv) in gb[p * cols..(p + 1) * cols].iter_mut().zip(g_row) {
                                *o += xv * gv;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, &RealArray::new(vec![rows, inner], ga)?);
                    accumulate(&mut grads, *b, &RealArray::new(vec![inner, cols], gb)?);
                }
                Op::Tanh(a) => {
                    let local = zip_map(&g, &node.value, |p, y| p * (1.0 - y * y));
                    accumulate(&mut grads, *a, &local);
                }
                Op::Sigmoid(a) => {
                    let local = zip_map(&g, &node.value, |p, y| p * y * (1.0 - y));
                    accumulate(&mut grads, *a, &local);
                }
                Op::Log(a) => {
                    let local = zip_map(&g, &self.nodes[*a].value, |p, x| p / x);
                    accumulate(&mut grads, *a, &local);
                }
                Op::Exp(a) => {
                    let local = zip_map(&g, &node.value, |p, y| p * y);
                    accumulate(&mut grads, *a, &local);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let cols = y.cols();
                    let mut local = g.clone();
                    for (l_row, y_row) in local.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)) {
                        let dot: f64 = l_row.iter().zip(y_row).map(|(p, q)| p * q).sum();
                        for (l, yv) in l_row.iter_mut().zip(y_row) {
                            *l = yv * (*l - dot);
                        }
                    }
                    accumulate(&mut grads, *a, &local);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let cols = y.cols();
                    let mut local = g.clone();
                    for (l_row, y_row) in local.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)) {
                        let total: f64 = l_row.iter().sum();
                        for (l, yv) in l_row.iter_mut().zip(y_row) {
                            *l -= yv.exp() * total;
                        }
                    }
                    accumulate(&mut grads, *a, &local);
                }
                Op::Sum(a) => {
                    let shape = self.nodes[*a].value.shape();
                    accumulate(&mut grads, *a, &RealArray::filled(shape, g.item()));
                }
                Op::Scale(a, factor) => {
                    accumulate(&mut grads, *a, &g.map(|v| v * factor));
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let shape = self.nodes[*p].value.shape().to_vec();
                        let len = self.nodes[*p].value.len();
                        let piece = g.data()[offset * cols..offset * cols + len].to_vec();
                        offset += len / cols.max(1);
                        accumulate(&mut grads, *p, &RealArray::new(shape, piece)?);
                    }
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let mut col_offset = 0;
                    for p in parts {
                        let v = &self.nodes[*p].value;
                        let w = v.cols();
                        let mut piece = Vec::with_capacity(v.len());
                        for r in 0..rows {
                            piece.extend_from_slice(&g.row_slice(r)[col_offset..col_offset + w]);
                        }
                        col_offset += w;
                        accumulate(&mut grads, *p, &RealArray::new(v.shape().to_vec(), piece)?);
                    }
                }
                Op::SliceRows(a, start) => {
                    let src = &self.nodes[*a].value;
                    let cols = src.cols();
                    let mut local = RealArray::zeros(src.shape());
                    local.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *a, &local);
                }
                Op::MeanPoolRows(a, stride) => {
                    let src = &self.nodes[*a].value;
                    let (rows, cols) = (src.rows(), src.cols());
                    let mut local = RealArray::zeros(src.shape());
                    for o in 0..g.rows() {
                        let lo = o * stride;
                        let hi = (lo + stride).min(rows);
                        let inv = 1.0 / (hi - lo) as f64;
                        for r in lo..hi {
                            let dst = &mut local.data_mut()[r * cols..(r + 1) * cols];
                            for (d, v) in dst.iter_mut().zip(g.row_slice(o)) {
                                *d += v * inv;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, &local);
                }
                Op::ReverseRows(a) => {
                    let cols = g.cols();
                    let mut data = Vec::with_capacity(g.len());
                    for r in (0..g.rows()).rev() {
                        data.extend_from_slice(&g.data()[r * cols..(r + 1) * cols]);
                    }
                    let shape = self.nodes[*a].value.shape().to_vec();
                    accumulate(&mut grads, *a, &RealArray::new(shape, data)?);
                }
                Op::Head(a, local) => {
                    let scale = g.item();
                    accumulate(&mut grads, *a, &local.map(|v| v * scale));
                }
            }
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn zip_map(a: &RealArray, b: &RealArray, f: impl Fn(f64, f64) -> f64) -> RealArray {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    RealArray::new(a.shape().to_vec(), data).expect("congruent shapes")
}

fn accumulate(grads: &mut [Option<RealArray>], idx: usize, g: &RealArray) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(g),
        slot @ None => *slot = Some(g.clone()),
    }
}
