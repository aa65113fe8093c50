//! Dynamic reverse-mode tape.
//!
//! Every forward op appends a node holding its output value and enough
//! information to push gradients back to its inputs. `backward` walks the
//! tape once in reverse. Parameters enter the tape by value (a snapshot of
//! the store at bind time), so the store may be mutated freely once the
//! gradients have been written back.

use std::cell::RefCell;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::kernels::{self, gelu, gelu_derivative};
use crate::numerics::{ParameterStore, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Param(String),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, S),
    Transpose(Var),
    Softmax { input: Var, axis: usize },
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<S>,
        inv_std: Vec<S>,
    },
    Gelu(Var),
    ConcatCols(Vec<Var>),
    SliceCols { input: Var, start: usize },
    MeanRows(Var),
    RepeatRows(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node<S> {
    shape: Vec<usize>,
    value: Vec<S>,
    op: Op<S>,
}

#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: RefCell<Vec<Node<S>>>,
}

/// Parameters of a store bound onto one tape.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("parameter {name} not bound")))
    }
}

fn cols_of(shape: &[usize]) -> usize {
    *shape.last().unwrap_or(&1)
}

fn rows_of(shape: &[usize]) -> usize {
    shape[..shape.len().saturating_sub(1)].iter().product()
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, name: &str, shape: Vec<usize>, value: Vec<S>, op: Op<S>) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(name.to_string()));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { shape, value, op });
        Ok(Var(nodes.len() - 1))
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].shape.clone()
    }

    pub fn value(&self, v: Var) -> Tensor<S> {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape node holds a valid tensor")
    }

    pub fn scalar_value(&self, v: Var) -> S {
        self.nodes.borrow()[v.0].value[0]
    }

    /// Records a constant input (no gradient is reported for it).
    pub fn constant(&self, t: &Tensor<S>) -> Result<Var> {
        self.push("constant", t.shape().to_vec(), t.data().to_vec(), Op::Leaf)
    }

    pub fn constant_from(&self, shape: Vec<usize>, data: Vec<S>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        self.push("constant", t.shape().to_vec(), t.into_data(), Op::Leaf)
    }

    pub fn param(&self, store: &ParameterStore<S>, name: &str) -> Result<Var> {
        let t = store.get(name)?;
        self.push(
            "param",
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Param(name.to_string()),
        )
    }

    /// Binds every parameter of `store` onto the tape.
    pub fn bind(&self, store: &ParameterStore<S>) -> Result<Bound> {
        let mut vars = BTreeMap::new();
        for name in store.names() {
            vars.insert(name.to_string(), self.param(store, name)?);
        }
        Ok(Bound { vars })
    }

    fn binary_same_shape(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            if na.shape != nb.shape {
                return Err(Error::shape(name, &na.shape, &nb.shape));
            }
            let value = na
                .value
                .iter()
                .zip(&nb.value)
                .map(|(&x, &y)| f(x, y))
                .collect();
            (na.shape.clone(), value)
        };
        self.push(name, shape, value, op)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a row vector (any tensor with `cols` elements) to every row of
    /// `x`. This is the only broadcasting op.
    pub fn add_row(&self, x: Var, row: Var) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let (nx, nr) = (&nodes[x.0], &nodes[row.0]);
            let cols = cols_of(&nx.shape);
            if nr.value.len() != cols {
                return Err(Error::shape("add_row", &nx.shape, &nr.shape));
            }
            let mut value = nx.value.clone();
            for chunk in value.chunks_mut(cols) {
                for (v, &r) in chunk.iter_mut().zip(&nr.value) {
                    *v += r;
                }
            }
            (nx.shape.clone(), value)
        };
        self.push("add_row", shape, value, Op::AddRow(x, row))
    }

    pub fn scale(&self, a: Var, c: S) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            (n.shape.clone(), n.value.iter().map(|&v| v * c).collect())
        };
        self.push("scale", shape, value, Op::Scale(a, c))
    }

    /// Matrix product over the last two axes; leading axes are batch axes
    /// and must match exactly.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let (sa, sb) = (&nodes[a.0].shape, &nodes[b.0].shape);
            let (batch, m, k, n) = matmul_dims(sa, sb)?;
            let mut out = vec![S::zero(); batch * m * n];
            for bi in 0..batch {
                kernels::matmul_acc(
                    &nodes[a.0].value[bi * m * k..(bi + 1) * m * k],
                    &nodes[b.0].value[bi * k * n..(bi + 1) * k * n],
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
            let mut shape = sa[..sa.len() - 2].to_vec();
            shape.extend([m, n]);
            (shape, out)
        };
        self.push("matmul", shape, value, Op::MatMul(a, b))
    }

    /// `a · bᵀ` for matrices `a[m×k]`, `b[n×k]`.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let (sa, sb) = (&nodes[a.0].shape, &nodes[b.0].shape);
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
                return Err(Error::shape("matmul_nt", sa, sb));
            }
            let (m, k, n) = (sa[0], sa[1], sb[0]);
            let mut out = vec![S::zero(); m * n];
            kernels::matmul_nt_acc(&nodes[a.0].value, &nodes[b.0].value, &mut out, m, k, n);
            (vec![m, n], out)
        };
        self.push("matmul_nt", shape, value, Op::MatMulNt(a, b))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            if n.shape.len() != 2 {
                return Err(Error::contract(format!(
                    "transpose expects a matrix, got {:?}",
                    n.shape
                )));
            }
            let (r, c) = (n.shape[0], n.shape[1]);
            (vec![c, r], kernels::transpose(&n.value, r, c))
        };
        self.push("transpose", shape, value, Op::Transpose(a))
    }

    /// Softmax along `axis`, stabilized by subtracting the per-slice max.
    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            if axis >= n.shape.len() {
                return Err(Error::Axis {
                    axis,
                    rank: n.shape.len(),
                });
            }
            let (outer, len, inner) = axis_split(&n.shape, axis);
            let mut out = vec![S::zero(); n.value.len()];
            for o in 0..outer {
                for j in 0..inner {
                    let idx = |i: usize| (o * len + i) * inner + j;
                    let mut max = S::neg_infinity();
                    for i in 0..len {
                        max = max.max(n.value[idx(i)]);
                    }
                    let mut total = S::zero();
                    for i in 0..len {
                        let e = (n.value[idx(i)] - max).exp();
                        out[idx(i)] = e;
                        total += e;
                    }
                    for i in 0..len {
                        out[idx(i)] /= total;
                    }
                }
            }
            (n.shape.clone(), out)
        };
        self.push("softmax", shape, value, Op::Softmax { input: a, axis })
    }

    /// Normalizes each row (last axis) to zero mean and unit variance, then
    /// applies `gain` and `bias`.
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var, eps: S) -> Result<Var> {
        let (shape, value, normalized, inv_std) = {
            let nodes = self.nodes.borrow();
            let nx = &nodes[x.0];
            let cols = cols_of(&nx.shape);
            let (g, b) = (&nodes[gain.0], &nodes[bias.0]);
            if g.value.len() != cols || b.value.len() != cols {
                return Err(Error::shape("layer_norm", &nx.shape, &g.shape));
            }
            let rows = rows_of(&nx.shape);
            let inv_cols = S::one() / S::of(cols as f64);
            let mut normalized = vec![S::zero(); nx.value.len()];
            let mut out = vec![S::zero(); nx.value.len()];
            let mut inv_std = vec![S::zero(); rows];
            for r in 0..rows {
                let row = &nx.value[r * cols..(r + 1) * cols];
                let mean = row.iter().copied().sum::<S>() * inv_cols;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_cols;
                let rstd = S::one() / (var + eps).sqrt();
                inv_std[r] = rstd;
                for c in 0..cols {
                    let xh = (row[c] - mean) * rstd;
                    normalized[r * cols + c] = xh;
                    out[r * cols + c] = xh * g.value[c] + b.value[c];
                }
            }
            (nx.shape.clone(), out, normalized, inv_std)
        };
        self.push(
            "layer_norm",
            shape,
            value,
            Op::LayerNorm {
                input: x,
                gain,
                bias,
                normalized,
                inv_std,
            },
        )
    }

    /// Elementwise GELU, tanh approximation.
    pub fn gelu(&self, a: Var) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            (n.shape.clone(), n.value.iter().map(|&v| gelu(v)).collect())
        };
        self.push("gelu", shape, value, Op::Gelu(a))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let first = parts
                .first()
                .ok_or_else(|| Error::contract("concat_cols of nothing"))?;
            let rows = nodes[first.0].shape[0];
            let mut widths = Vec::with_capacity(parts.len());
            for p in parts {
                let s = &nodes[p.0].shape;
                if s.len() != 2 || s[0] != rows {
                    return Err(Error::shape("concat_cols", &nodes[first.0].shape, s));
                }
                widths.push(s[1]);
            }
            let total: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (p, &w) in parts.iter().zip(&widths) {
                    out.extend_from_slice(&nodes[p.0].value[r * w..(r + 1) * w]);
                }
            }
            (vec![rows, total], out)
        };
        self.push("concat_cols", shape, value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            if n.shape.len() != 2 || len == 0 || start + len > n.shape[1] {
                return Err(Error::shape("slice_cols", &n.shape, &[start, len]));
            }
            let (rows, cols) = (n.shape[0], n.shape[1]);
            let mut out = Vec::with_capacity(rows * len);
            for r in 0..rows {
                out.extend_from_slice(&n.value[r * cols + start..r * cols + start + len]);
            }
            (vec![rows, len], out)
        };
        self.push("slice_cols", shape, value, Op::SliceCols { input: a, start })
    }

    /// Column means of a matrix, as a `[1 × cols]` matrix.
    pub fn mean_rows(&self, a: Var) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            let (rows, cols) = (rows_of(&n.shape), cols_of(&n.shape));
            let mut out = vec![S::zero(); cols];
            for chunk in n.value.chunks(cols) {
                for (o, &v) in out.iter_mut().zip(chunk) {
                    *o += v;
                }
            }
            let inv = S::one() / S::of(rows as f64);
            out.iter_mut().for_each(|v| *v *= inv);
            (vec![1, cols], out)
        };
        self.push("mean_rows", shape, value, Op::MeanRows(a))
    }

    /// Stacks `times` copies of a `[1 × cols]` row.
    pub fn repeat_rows(&self, a: Var, times: usize) -> Result<Var> {
        let (shape, value) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            if n.shape.len() != 2 || n.shape[0] != 1 || times == 0 {
                return Err(Error::shape("repeat_rows", &n.shape, &[times]));
            }
            (vec![times, n.shape[1]], n.value.repeat(times))
        };
        self.push("repeat_rows", shape, value, Op::RepeatRows(a))
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        let total = self.nodes.borrow()[a.0].value.iter().copied().sum::<S>();
        self.push("sum", vec![1], vec![total], Op::Sum(a))
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let n = self.nodes.borrow()[a.0].value.len();
        let s = self.sum(a)?;
        self.scale(s, S::one() / S::of(n as f64))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, &nodes, *a, |d| add_into(d, &g));
                    accumulate(&mut grads, &nodes, *b, |d| add_into(d, &g));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, &nodes, *a, |d| add_into(d, &g));
                    accumulate(&mut grads, &nodes, *b, |d| {
                        d.iter_mut().zip(&g).for_each(|(d, &g)| *d -= g)
                    });
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    accumulate(&mut grads, &nodes, *a, |d| {
                        for ((d, &g), &y) in d.iter_mut().zip(&g).zip(vb) {
                            *d += g * y;
                        }
                    });
                    accumulate(&mut grads, &nodes, *b, |d| {
                        for ((d, &g), &x) in d.iter_mut().zip(&g).zip(va) {
                            *d += g * x;
                        }
                    });
                }
                Op::AddRow(x, row) => {
                    accumulate(&mut grads, &nodes, *x, |d| add_into(d, &g));
                    let cols = cols_of(&node.shape);
                    accumulate(&mut grads, &nodes, *row, |d| {
                        for chunk in g.chunks(cols) {
                            add_into(d, chunk);
                        }
                    });
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, &nodes, *a, |d| {
                        d.iter_mut().zip(&g).for_each(|(d, &g)| *d += g * *c)
                    });
                }
                Op::MatMul(a, b) => {
                    let (sa, sb) = (&nodes[a.0].shape, &nodes[b.0].shape);
                    let (batch, m, k, n) = matmul_dims(sa, sb)?;
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    accumulate(&mut grads, &nodes, *a, |d| {
                        for bi in 0..batch {
                            kernels::matmul_nt_acc(
                                &g[bi * m * n..(bi + 1) * m * n],
                                &vb[bi * k * n..(bi + 1) * k * n],
                                &mut d[bi * m * k..(bi + 1) * m * k],
                                m,
                                n,
                                k,
                            );
                        }
                    });
                    accumulate(&mut grads, &nodes, *b, |d| {
                        for bi in 0..batch {
                            kernels::matmul_tn_acc(
                                &va[bi * m * k..(bi + 1) * m * k],
                                &g[bi * m * n..(bi + 1) * m * n],
                                &mut d[bi * k * n..(bi + 1) * k * n],
                                m,
                                k,
                                n,
                            );
                        }
                    });
                }
                Op::MatMulNt(a, b) => {
                    let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let n = nodes[b.0].shape[0];
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    accumulate(&mut grads, &nodes, *a, |d| {
                        kernels::matmul_acc(&g, vb, d, m, n, k);
                    });
                    accumulate(&mut grads, &nodes, *b, |d| {
                        kernels::matmul_tn_acc(&g, va, d, m, n, k);
                    });
                }
                Op::Transpose(a) => {
                    let (r, c) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let gt = kernels::transpose(&g, c, r);
                    accumulate(&mut grads, &nodes, *a, |d| add_into(d, &gt));
                }
                Op::Softmax { input, axis } => {
                    let y = &node.value;
                    let (outer, len, inner) = axis_split(&node.shape, *axis);
                    accumulate(&mut grads, &nodes, *input, |d| {
                        for o in 0..outer {
                            for j in 0..inner {
                                let idx = |i: usize| (o * len + i) * inner + j;
                                let dot = (0..len).map(|i| g[idx(i)] * y[idx(i)]).sum::<S>();
                                for i in 0..len {
                                    d[idx(i)] += y[idx(i)] * (g[idx(i)] - dot);
                                }
                            }
                        }
                    });
                }
                Op::LayerNorm {
                    input,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    let cols = cols_of(&node.shape);
                    let gv = &nodes[gain.0].value;
                    accumulate(&mut grads, &nodes, *gain, |d| {
                        for (gc, xc) in g.chunks(cols).zip(normalized.chunks(cols)) {
                            for c in 0..cols {
                                d[c] += gc[c] * xc[c];
                            }
                        }
                    });
                    accumulate(&mut grads, &nodes, *bias, |d| {
                        for gc in g.chunks(cols) {
                            add_into(d, gc);
                        }
                    });
                    let inv_cols = S::one() / S::of(cols as f64);
                    accumulate(&mut grads, &nodes, *input, |d| {
                        for (r, (gc, xc)) in
                            g.chunks(cols).zip(normalized.chunks(cols)).enumerate()
                        {
                            let mut mean_dxh = S::zero();
                            let mut mean_dxh_xh = S::zero();
                            for c in 0..cols {
                                let dxh = gc[c] * gv[c];
                                mean_dxh += dxh;
                                mean_dxh_xh += dxh * xc[c];
                            }
                            mean_dxh *= inv_cols;
                            mean_dxh_xh *= inv_cols;
                            for c in 0..cols {
                                let dxh = gc[c] * gv[c];
                                d[r * cols + c] +=
                                    inv_std[r] * (dxh - mean_dxh - xc[c] * mean_dxh_xh);
                            }
                        }
                    });
                }
                Op::Gelu(a) => {
                    let x = &nodes[a.0].value;
                    accumulate(&mut grads, &nodes, *a, |d| {
                        for ((d, &g), &x) in d.iter_mut().zip(&g).zip(x) {
                            *d += g * gelu_derivative(x);
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let rows = node.shape[0];
                    let total = node.shape[1];
                    let mut offset = 0;
                    for p in parts {
                        let w = nodes[p.0].shape[1];
                        accumulate(&mut grads, &nodes, *p, |d| {
                            for r in 0..rows {
                                add_into(
                                    &mut d[r * w..(r + 1) * w],
                                    &g[r * total + offset..r * total + offset + w],
                                );
                            }
                        });
                        offset += w;
                    }
                }
                Op::SliceCols { input, start } => {
                    let (rows, len) = (node.shape[0], node.shape[1]);
                    let cols = nodes[input.0].shape[1];
                    accumulate(&mut grads, &nodes, *input, |d| {
                        for r in 0..rows {
                            add_into(
                                &mut d[r * cols + start..r * cols + start + len],
                                &g[r * len..(r + 1) * len],
                            );
                        }
                    });
                }
                Op::MeanRows(a) => {
                    let rows = rows_of(&nodes[a.0].shape);
                    let inv = S::one() / S::of(rows as f64);
                    accumulate(&mut grads, &nodes, *a, |d| {
                        for chunk in d.chunks_mut(g.len()) {
                            for (d, &g) in chunk.iter_mut().zip(&g) {
                                *d += g * inv;
                            }
                        }
                    });
                }
                Op::RepeatRows(a) => {
                    let cols = node.shape[1];
                    accumulate(&mut grads, &nodes, *a, |d| {
                        for chunk in g.chunks(cols) {
                            add_into(d, chunk);
                        }
                    });
                }
                Op::Sum(a) => {
                    accumulate(&mut grads, &nodes, *a, |d| {
                        d.iter_mut().for_each(|d| *d += g[0])
                    });
                }
            }
            grads[i] = Some(g);
        }

        let mut params = BTreeMap::<String, Vec<S>>::new();
        for (i, node) in nodes.iter().enumerate().take(loss.0 + 1) {
            if let (Op::Param(name), Some(g)) = (&node.op, &grads[i]) {
                match params.get_mut(name) {
                    Some(acc) => add_into(acc, g),
                    None => {
                        params.insert(name.clone(), g.clone());
                    }
                }
            }
        }
        Ok(Gradients { grads, params })
    }
}

fn add_into<S: Scalar>(d: &mut [S], g: &[S]) {
    for (d, &g) in d.iter_mut().zip(g) {
        *d += g;
    }
}

fn accumulate<S: Scalar>(
    grads: &mut [Option<Vec<S>>],
    nodes: &[Node<S>],
    target: Var,
    f: impl FnOnce(&mut [S]),
) {
    let slot = &mut grads[target.0];
    let buf = slot.get_or_insert_with(|| vec![S::zero(); nodes[target.0].value.len()]);
    f(buf);
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn matmul_dims(sa: &[usize], sb: &[usize]) -> Result<(usize, usize, usize, usize)> {
    if sa.len() < 2 || sa.len() != sb.len() {
        return Err(Error::shape("matmul", sa, sb));
    }
    let r = sa.len();
    if sa[..r - 2] != sb[..r - 2] || sa[r - 1] != sb[r - 2] {
        return Err(Error::shape("matmul", sa, sb));
    }
    let batch = sa[..r - 2].iter().product();
    Ok((batch, sa[r - 2], sa[r - 1], sb[r - 1]))
}

/// Result of a reverse pass.
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
    params: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the loss with respect to any recorded value, or `None`
    /// when the value does not reach the loss.
    pub fn wrt(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, name: &str) -> Option<&[S]> {
        self.params.get(name).map(Vec::as_slice)
    }

    /// Writes gradients into the store. Parameters the loss does not depend
    /// on receive an all-zero gradient.
    pub fn write_to(&self, store: &mut ParameterStore<S>) -> Result<()> {
        for (name, t) in store.iter_mut() {
            let g = match self.params.get(name) {
                Some(g) => g.clone(),
                None => vec![S::zero(); t.numel()],
            };
            t.set_grad(g)?;
        }
        Ok(())
    }
}

/// Runs the reverse pass from `loss` and stores `∂loss/∂param` on every
/// parameter of `store`.
pub fn backward_gradients<S: Scalar>(
    tape: &Tape<S>,
    loss: Var,
    store: &mut ParameterStore<S>,
) -> Result<()> {
    tape.backward(loss)?.write_to(store)
}
