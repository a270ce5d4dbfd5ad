//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node appended to a tape. Because
//! nodes can only reference earlier nodes, the tape is already in topological
//! order and `backward` is a single reverse sweep.

use super::kernels::{self, mm_acc, mm_nt_acc, mm_tn_acc};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T: Real> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Abs(Var),
    Sum(Var),
    Reshape(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    Gelu(Var),
    Diag(Var),
}

#[derive(Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Debug, Default)]
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

fn check_finite<T: Real>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf; gradients are tracked iff `tensor.requires_grad`.
    pub fn leaf(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.grad = None;
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient written by the last `backward` call, if `v` tracks gradients.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn push(
        &mut self,
        op_name: &'static str,
        dims: Vec<usize>,
        data: Vec<T>,
        op: Op<T>,
        inputs: &[Var],
    ) -> Result<Var> {
        check_finite(op_name, &data)?;
        let requires_grad = inputs.iter().any(|&v| self.requires_grad(v));
        let mut value = Tensor::from_parts(dims, data);
        value.requires_grad = requires_grad;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let d = self.value(v).dims();
        if d.len() != 2 {
            return Err(Error::shape(op, format!("expected a matrix, got dims {d:?}")));
        }
        Ok((d[0], d[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}×{k}] × [{k2}×{n}]")));
        }
        let mut out = vec![T::zero(); m * n];
        mm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    /// a[m×k] · b[n×k]ᵀ
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul_nt", a)?;
        let (n, k2) = self.matrix_dims("matmul_nt", b)?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", format!("[{m}×{k}] × [{n}×{k2}]ᵀ")));
        }
        let mut out = vec![T::zero(); m * n];
        mm_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push("matmul_nt", vec![m, n], out, Op::MatMulNt(a, b), &[a, b])
    }

    /// x[m×in] · w[out×in]ᵀ + b[out]
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul_nt(x, w)?;
        self.add_row(y, b)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (da, db) = (self.value(a).dims(), self.value(b).dims());
        if da != db {
            return Err(Error::shape(op, format!("{da:?} vs {db:?}")));
        }
        Ok(())
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let dims = self.value(a).dims().to_vec();
        self.push(name, dims, out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds the vector `row` to every row of `x` (last-dim broadcast).
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        let rd = self.value(row).dims();
        if rd != [cols] {
            return Err(Error::shape("add_row", format!("row {rd:?} vs last dim {cols}")));
        }
        let r = self.value(row).data();
        let out = self
            .value(x)
            .data()
            .chunks(cols)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&a, &b)| a + b))
            .collect();
        let dims = self.value(x).dims().to_vec();
        self.push("add_row", dims, out, Op::AddRow(x, row), &[x, row])
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.value(x).data().iter().map(|&v| v * c).collect();
        let dims = self.value(x).dims().to_vec();
        self.push("scale", dims, out, Op::Scale(x, c), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).data().iter().map(|v| v.abs()).collect();
        let dims = self.value(x).dims().to_vec();
        self.push("abs", dims, out, Op::Abs(x), &[x])
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        self.scale(s, T::one() / T::of(n as f64))
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        Tensor::<T>::check_reshape(self.value(x).len(), dims)?;
        let data = self.value(x).data().to_vec();
        self.push("reshape", dims.to_vec(), data, Op::Reshape(x), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims("transpose", x)?;
        let data = kernels::transpose(self.value(x).data(), r, c);
        self.push("transpose", vec![c, r], data, Op::Transpose(x), &[x])
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let cols = self.matrix_dims("concat_rows", first)?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.matrix_dims("concat_rows", p)?;
            if c != cols {
                return Err(Error::shape("concat_rows", format!("{c} cols vs {cols}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        self.push(
            "concat_rows",
            vec![rows, cols],
            data,
            Op::ConcatRows(parts.to_vec()),
            parts,
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.matrix_dims("slice_rows", x)?;
        if len == 0 || start + len > r {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{} of {r}", start + len),
            ));
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        self.push("slice_rows", vec![len, c], data, Op::SliceRows(x, start), &[x])
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let rows = self.matrix_dims("concat_cols", first)?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix_dims("concat_cols", p)?;
            if r != rows {
                return Err(Error::shape("concat_cols", format!("{r} rows vs {rows}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(
            "concat_cols",
            vec![rows, total],
            data,
            Op::ConcatCols(parts.to_vec()),
            parts,
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.matrix_dims("slice_cols", x)?;
        if len == 0 || start + len > c {
            return Err(Error::shape(
                "slice_cols",
                format!("cols {start}..{} of {c}", start + len),
            ));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        self.push("slice_cols", vec![r, len], data, Op::SliceCols(x, start), &[x])
    }

    /// Row-wise normalization over the last dim followed by `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        if !(eps > T::zero()) {
            return Err(Error::Contract("layer_norm eps must be positive".into()));
        }
        let d = self.value(x).cols();
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).dims() != [d] {
                return Err(Error::shape(
                    "layer_norm",
                    format!("{name} dims {:?} vs last dim {d}", self.value(v).dims()),
                ));
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let xs = self.value(x).data();
        let rows = xs.len() / d;
        let inv_d = T::one() / T::of(d as f64);
        let mut xhat = Vec::with_capacity(xs.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xs.len());
        for row in xs.chunks(d) {
            let mu = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mu) * rs;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let dims = self.value(x).dims().to_vec();
        self.push(
            "layer_norm",
            dims,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    /// Row-wise softmax over the last dim, stabilized by max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).cols();
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for (o, row) in out.chunks_mut(n).zip(src.chunks(n)) {
            kernels::softmax_row(row, o);
        }
        let dims = self.value(x).dims().to_vec();
        self.push("softmax_rows", dims, out, Op::Softmax(x), &[x])
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).cols();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(src.len());
        for row in src.chunks(n) {
            let lse = kernels::log_sum_exp(row);
            out.extend(row.iter().map(|&v| v - lse));
        }
        let dims = self.value(x).dims().to_vec();
        self.push("log_softmax_rows", dims, out, Op::LogSoftmax(x), &[x])
    }

    /// Exact GELU, x·Φ(x).
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).data().iter().map(|&v| v * kernels::phi(v)).collect();
        let dims = self.value(x).dims().to_vec();
        self.push("gelu", dims, out, Op::Gelu(x), &[x])
    }

    /// Diagonal of a square matrix.
    pub fn diag(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims("diag", x)?;
        if r != c {
            return Err(Error::shape("diag", format!("[{r}×{c}] is not square")));
        }
        let src = self.value(x).data();
        let data = (0..r).map(|i| src[i * c + i]).collect();
        self.push("diag", vec![r], data, Op::Diag(x), &[x])
    }

    /// Populates `grad` on every gradient-tracking node with ∂loss/∂node.
    ///
    /// Previous gradients are overwritten, never accumulated. Tracked nodes
    /// that do not influence `loss` receive zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got dims {:?}",
                self.value(loss).dims()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad {
                continue;
            }
            self.propagate(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.value.grad = if node.value.requires_grad {
                Some(g.unwrap_or_else(|| vec![T::zero(); node.value.len()]))
            } else {
                None
            };
        }
        Ok(())
    }

    fn propagate(&self, i: usize, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let dims = |v: Var| nodes[v.0].value.dims();
        // Accumulate into the adjoint of `v` when it tracks gradients.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if nodes[v.0].value.requires_grad {
                let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
                f(slot);
            }
        };

        match &nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k, n) = (dims(a)[0], dims(a)[1], dims(b)[1]);
                let bt = kernels::transpose(val(b), k, n);
                acc(a, &mut |g| mm_acc(gout, &bt, g, m, n, k));
                acc(b, &mut |g| mm_tn_acc(val(a), gout, g, m, k, n));
            }
            &Op::MatMulNt(a, b) => {
                let (m, k, n) = (dims(a)[0], dims(a)[1], dims(b)[0]);
                acc(a, &mut |g| mm_acc(gout, val(b), g, m, n, k));
                acc(b, &mut |g| mm_tn_acc(gout, val(a), g, m, n, k));
            }
            &Op::Add(a, b) => {
                acc(a, &mut |g| add_into(g, gout));
                acc(b, &mut |g| add_into(g, gout));
            }
            &Op::Sub(a, b) => {
                acc(a, &mut |g| add_into(g, gout));
                acc(b, &mut |g| {
                    for (x, &y) in g.iter_mut().zip(gout) {
                        *x = *x - y;
                    }
                });
            }
            &Op::Mul(a, b) => {
                acc(a, &mut |g| {
                    for ((x, &y), &o) in g.iter_mut().zip(val(b)).zip(gout) {
                        *x = *x + y * o;
                    }
                });
                acc(b, &mut |g| {
                    for ((x, &y), &o) in g.iter_mut().zip(val(a)).zip(gout) {
                        *x = *x + y * o;
                    }
                });
            }
            &Op::AddRow(x, row) => {
                acc(x, &mut |g| add_into(g, gout));
                let n = val(row).len();
                acc(row, &mut |g| {
                    for chunk in gout.chunks(n) {
                        add_into(g, chunk);
                    }
                });
            }
            &Op::Scale(x, c) => acc(x, &mut |g| {
                for (a, &o) in g.iter_mut().zip(gout) {
                    *a = *a + c * o;
                }
            }),
            &Op::Abs(x) => acc(x, &mut |g| {
                for ((a, &v), &o) in g.iter_mut().zip(val(x)).zip(gout) {
                    let s = if v > T::zero() {
                        T::one()
                    } else if v < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    *a = *a + s * o;
                }
            }),
            &Op::Sum(x) => acc(x, &mut |g| {
                for a in g.iter_mut() {
                    *a = *a + gout[0];
                }
            }),
            &Op::Reshape(x) => acc(x, &mut |g| add_into(g, gout)),
            &Op::Transpose(x) => {
                let (r, c) = (dims(x)[0], dims(x)[1]);
                let back = kernels::transpose(gout, c, r);
                acc(x, &mut |g| add_into(g, &back));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    acc(p, &mut |g| add_into(g, &gout[offset..offset + len]));
                    offset += len;
                }
            }
            &Op::SliceRows(x, start) => {
                let c = dims(x)[1];
                let off = start * c;
                acc(x, &mut |g| add_into(&mut g[off..off + gout.len()], gout));
            }
            Op::ConcatCols(parts) => {
                let total = nodes[i].value.cols();
                let rows = gout.len() / total;
                let mut col = 0;
                for &p in parts {
                    let w = dims(p)[1];
                    acc(p, &mut |g| {
                        for r in 0..rows {
                            add_into(&mut g[r * w..(r + 1) * w], &gout[r * total + col..r * total + col + w]);
                        }
                    });
                    col += w;
                }
            }
            &Op::SliceCols(x, start) => {
                let c = dims(x)[1];
                let w = nodes[i].value.cols();
                let rows = gout.len() / w;
                acc(x, &mut |g| {
                    for r in 0..rows {
                        add_into(&mut g[r * c + start..r * c + start + w], &gout[r * w..(r + 1) * w]);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = val(*gamma).len();
                let gm = val(*gamma);
                acc(*gamma, &mut |g| {
                    for (go, xh) in gout.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            g[j] = g[j] + go[j] * xh[j];
                        }
                    }
                });
                acc(*beta, &mut |g| {
                    for go in gout.chunks(d) {
                        add_into(g, go);
                    }
                });
                acc(*x, &mut |g| {
                    let inv_d = T::one() / T::of(d as f64);
                    for (r, (go, xh)) in gout.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let mut mean_dxh = T::zero();
                        let mut mean_dxh_xh = T::zero();
                        for j in 0..d {
                            let dxh = go[j] * gm[j];
                            mean_dxh = mean_dxh + dxh;
                            mean_dxh_xh = mean_dxh_xh + dxh * xh[j];
                        }
                        mean_dxh = mean_dxh * inv_d;
                        mean_dxh_xh = mean_dxh_xh * inv_d;
                        let gr = &mut g[r * d..(r + 1) * d];
                        for j in 0..d {
                            let dxh = go[j] * gm[j];
                            gr[j] = gr[j] + rstd[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                });
            }
            &Op::Softmax(x) => {
                let n = nodes[i].value.cols();
                let y = nodes[i].value.data();
                acc(x, &mut |g| {
                    for ((gr, yr), gor) in g.chunks_mut(n).zip(y.chunks(n)).zip(gout.chunks(n)) {
                        let s: T = yr.iter().zip(gor).map(|(&a, &b)| a * b).sum();
                        for j in 0..n {
                            gr[j] = gr[j] + yr[j] * (gor[j] - s);
                        }
                    }
                });
            }
            &Op::LogSoftmax(x) => {
                let n = nodes[i].value.cols();
                let y = nodes[i].value.data();
                acc(x, &mut |g| {
                    for ((gr, yr), gor) in g.chunks_mut(n).zip(y.chunks(n)).zip(gout.chunks(n)) {
                        let s: T = gor.iter().copied().sum();
                        for j in 0..n {
                            gr[j] = gr[j] + gor[j] - yr[j].exp() * s;
                        }
                    }
                });
            }
            &Op::Gelu(x) => acc(x, &mut |g| {
                for ((a, &v), &o) in g.iter_mut().zip(val(x)).zip(gout) {
                    let d = kernels::phi(v) + v * kernels::normal_pdf(v);
                    *a = *a + d * o;
                }
            }),
            &Op::Diag(x) => {
                let n = gout.len();
                acc(x, &mut |g| {
                    for j in 0..n {
                        g[j * n + j] = g[j * n + j] + gout[j];
                    }
                });
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}
