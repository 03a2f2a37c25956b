//! Tape-based reverse-mode automatic differentiation over dense row-major
//! matrices, plus the Adam optimizer. The op set is exactly what the model
//! and losses need; sparse operators participate as constants (no gradient
//! through their values).
//!
//! Shape mismatches are programming errors and panic with the op name and
//! both shapes. `backward` and `adam_step` return errors for the recoverable
//! cases (non-scalar loss, non-finite gradients).

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use std::rc::Rc;

/// Handle to a tensor on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// One recorded tensor: value, gradient slot and the operation that made it.
#[derive(Debug)]
pub struct Tensor {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
    op: Op,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, f64),
    MulScalarVar(Var, Var),
    MatMul(Var, Var),
    SparseConstMatMul(Rc<CsrMatrix>, Var),
    AddRowBroadcast(Var, Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    Concat(Vec<Var>, usize),
    SliceCols(Var, usize),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    L2NormalizeRows(Var),
    StandardizeCols {
        input: Var,
        scale: Vec<f64>,
        exact: Vec<bool>,
    },
    ScaleRows(Var, Var),
    Gram(Var),
    Reshape(Var),
}

/// Ordered record of operations; inputs always precede outputs, and the
/// backward pass replays in exact reverse order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
}

const LOG_GUARD: f64 = 1e-12;

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: [usize; 2], data: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(shape[0] * shape[1], data.len());
        self.nodes.push(Tensor {
            shape,
            data,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: gradients accumulate here.
    pub fn leaf(&mut self, shape: [usize; 2], data: Vec<f64>) -> Var {
        self.push(shape, data, true, Op::Leaf)
    }

    /// Constant leaf: backward never touches it.
    pub fn constant(&mut self, shape: [usize; 2], data: Vec<f64>) -> Var {
        self.push(shape, data, false, Op::Leaf)
    }

    pub fn scalar_const(&mut self, value: f64) -> Var {
        self.constant([1, 1], vec![value])
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].shape
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert_eq!(self.shape(v), [1, 1]);
        self.nodes[v.0].data[0]
    }

    /// Gradient populated by the last `backward` call.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn binary_shape(&self, op: &str, a: Var, b: Var) -> [usize; 2] {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa, sb, "{op}: shape mismatch {sa:?} vs {sb:?}");
        sa
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let shape = self.binary_shape("add", a, b);
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.requires(a) || self.requires(b);
        self.push(shape, data, rg, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let shape = self.binary_shape("sub", a, b);
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x - y)
            .collect();
        let rg = self.requires(a) || self.requires(b);
        self.push(shape, data, rg, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let shape = self.binary_shape("mul", a, b);
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.requires(a) || self.requires(b);
        self.push(shape, data, rg, Op::Mul(a, b))
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Var {
        let shape = self.shape(a);
        let data = self.nodes[a.0].data.iter().map(|x| x * c).collect();
        let rg = self.requires(a);
        self.push(shape, data, rg, Op::ScalarMul(a, c))
    }

    /// Product with a `[1,1]` tensor (differentiable scalar coefficient).
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(
            self.shape(s),
            [1, 1],
            "mul_scalar_var: scalar operand has shape {:?}",
            self.shape(s)
        );
        let c = self.nodes[s.0].data[0];
        let shape = self.shape(a);
        let data = self.nodes[a.0].data.iter().map(|x| x * c).collect();
        let rg = self.requires(a) || self.requires(s);
        self.push(shape, data, rg, Op::MulScalarVar(a, s))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let ([m, k], [k2, n]) = (self.shape(a), self.shape(b));
        assert_eq!(
            k, k2,
            "matmul: inner dimensions {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let data = crate::dense::matmul(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        let rg = self.requires(a) || self.requires(b);
        self.push([m, n], data, rg, Op::MatMul(a, b))
    }

    /// Constant CSR matrix times dense tensor; no gradient flows into the
    /// sparse values.
    pub fn sparse_const_matmul(&mut self, s: Rc<CsrMatrix>, x: Var) -> Var {
        let [n, c] = self.shape(x);
        assert_eq!(
            s.n, n,
            "sparse_const_matmul: matrix is {}x{} but rhs has {n} rows",
            s.n, s.n
        );
        let mut data = vec![0.0; n * c];
        s.matmul_dense(&self.nodes[x.0].data, c, &mut data);
        let rg = self.requires(x);
        self.push([n, c], data, rg, Op::SparseConstMatMul(s, x))
    }

    /// Adds a `1×n` row vector to every row of an `m×n` tensor.
    pub fn add_row_broadcast(&mut self, x: Var, bias: Var) -> Var {
        let ([m, n], [bm, bn]) = (self.shape(x), self.shape(bias));
        assert!(
            bm == 1 && bn == n,
            "add_row_broadcast: bias {:?} does not match row width of {:?}",
            self.shape(bias),
            self.shape(x)
        );
        let mut data = Vec::with_capacity(m * n);
        for row in self.nodes[x.0].data.chunks(n) {
            for (v, b) in row.iter().zip(&self.nodes[bias.0].data) {
                data.push(v + b);
            }
        }
        let rg = self.requires(x) || self.requires(bias);
        self.push([m, n], data, rg, Op::AddRowBroadcast(x, bias))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let shape = self.shape(x);
        let data = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        let rg = self.requires(x);
        self.push(shape, data, rg, Op::LeakyRelu(x, slope))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let shape = self.shape(x);
        let data = self.nodes[x.0].data.iter().map(|v| v.tanh()).collect();
        let rg = self.requires(x);
        self.push(shape, data, rg, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let shape = self.shape(x);
        let data = self.nodes[x.0].data.iter().map(|v| v.exp()).collect();
        let rg = self.requires(x);
        self.push(shape, data, rg, Op::Exp(x))
    }

    /// Guarded logarithm ln(x + 1e−12).
    pub fn log(&mut self, x: Var) -> Var {
        let shape = self.shape(x);
        let data = self.nodes[x.0]
            .data
            .iter()
            .map(|v| (v + LOG_GUARD).ln())
            .collect();
        let rg = self.requires(x);
        self.push(shape, data, rg, Op::Log(x))
    }

    /// Numerically stable row-wise softmax.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let [m, n] = self.shape(x);
        let mut data = Vec::with_capacity(m * n);
        for row in self.nodes[x.0].data.chunks(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            data.extend(exps.iter().map(|e| e / total));
        }
        let rg = self.requires(x);
        self.push([m, n], data, rg, Op::SoftmaxRows(x))
    }

    /// Concatenates along `axis` (0 stacks rows, 1 widens columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat: no parts");
        assert!(axis < 2, "concat: axis {axis} out of range");
        let first = self.shape(parts[0]);
        let mut shape = first;
        for &p in &parts[1..] {
            let s = self.shape(p);
            assert_eq!(
                s[1 - axis],
                first[1 - axis],
                "concat: part shape {s:?} incompatible with {first:?} on axis {axis}"
            );
        }
        shape[axis] = parts.iter().map(|&p| self.shape(p)[axis]).sum();
        let data = if axis == 0 {
            let mut data = Vec::with_capacity(shape[0] * shape[1]);
            for &p in parts {
                data.extend_from_slice(&self.nodes[p.0].data);
            }
            data
        } else {
            let rows = shape[0];
            let mut data = Vec::with_capacity(rows * shape[1]);
            for r in 0..rows {
                for &p in parts {
                    let w = self.shape(p)[1];
                    data.extend_from_slice(&self.nodes[p.0].data[r * w..(r + 1) * w]);
                }
            }
            data
        };
        let rg = parts.iter().any(|&p| self.requires(p));
        self.push(shape, data, rg, Op::Concat(parts.to_vec(), axis))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let [m, n] = self.shape(x);
        assert!(
            start < end && end <= n,
            "slice_cols: {start}..{end} out of 0..{n}"
        );
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for r in 0..m {
            data.extend_from_slice(&self.nodes[x.0].data[r * n + start..r * n + end]);
        }
        let rg = self.requires(x);
        self.push([m, w], data, rg, Op::SliceCols(x, start))
    }

    /// Sum over all entries (`None`), down columns (`Some(0)` → 1×n) or
    /// across rows (`Some(1)` → m×1).
    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Var {
        let (shape, data) = self.reduce(x, axis);
        let rg = self.requires(x);
        self.push(shape, data, rg, Op::Sum(x, axis))
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Var {
        let [m, n] = self.shape(x);
        let count = match axis {
            None => m * n,
            Some(0) => m,
            Some(1) => n,
            Some(a) => panic!("mean: axis {a} out of range"),
        } as f64;
        let (shape, mut data) = self.reduce(x, axis);
        data.iter_mut().for_each(|v| *v /= count);
        let rg = self.requires(x);
        self.push(shape, data, rg, Op::Mean(x, axis))
    }

    fn reduce(&self, x: Var, axis: Option<usize>) -> ([usize; 2], Vec<f64>) {
        let [m, n] = self.shape(x);
        let src = &self.nodes[x.0].data;
        match axis {
            None => ([1, 1], vec![src.iter().sum::<f64>()]),
            Some(0) => {
                let mut out = vec![0.0; n];
                for row in src.chunks(n) {
                    for (o, v) in out.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                ([1, n], out)
            }
            Some(1) => ([m, 1], src.chunks(n).map(|row| row.iter().sum()).collect()),
            Some(a) => panic!("reduce: axis {a} out of range"),
        }
    }

    /// Rows scaled to unit L2 norm; rows with norm below 1e−12 map to zero.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let [m, n] = self.shape(x);
        let mut data = Vec::with_capacity(m * n);
        for row in self.nodes[x.0].data.chunks(n) {
            let norm = crate::dense::norm(row);
            if norm < 1e-12 {
                data.extend(std::iter::repeat_n(0.0, n));
            } else {
                data.extend(row.iter().map(|v| v / norm));
            }
        }
        let rg = self.requires(x);
        self.push([m, n], data, rg, Op::L2NormalizeRows(x))
    }

    /// Column standardization over the row batch: mean 0, variance 1, with
    /// scale `max(std, eps)` so constant columns map to zero.
    pub fn standardize_cols(&mut self, x: Var, eps: f64) -> Var {
        let [m, n] = self.shape(x);
        let src = &self.nodes[x.0].data;
        let mut mean = vec![0.0; n];
        for row in src.chunks(n) {
            for (mu, v) in mean.iter_mut().zip(row) {
                *mu += v;
            }
        }
        mean.iter_mut().for_each(|mu| *mu /= m as f64);
        let mut var = vec![0.0; n];
        for row in src.chunks(n) {
            for ((vv, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                *vv += (v - mu) * (v - mu);
            }
        }
        var.iter_mut().for_each(|v| *v /= m as f64);
        let mut scale = Vec::with_capacity(n);
        let mut exact = Vec::with_capacity(n);
        for &v in &var {
            let sd = v.sqrt();
            exact.push(sd > eps);
            scale.push(sd.max(eps));
        }
        let mut data = Vec::with_capacity(m * n);
        for row in src.chunks(n) {
            for ((v, mu), s) in row.iter().zip(&mean).zip(&scale) {
                data.push((v - mu) / s);
            }
        }
        let rg = self.requires(x);
        self.push(
            [m, n],
            data,
            rg,
            Op::StandardizeCols {
                input: x,
                scale,
                exact,
            },
        )
    }

    /// Multiplies row `i` of an `m×n` tensor by entry `i` of an `m×1` tensor.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Var {
        let ([m, n], ss) = (self.shape(x), self.shape(s));
        assert_eq!(ss, [m, 1], "scale_rows: scales {ss:?} do not match {m} rows");
        let mut data = Vec::with_capacity(m * n);
        for (row, sv) in self.nodes[x.0].data.chunks(n).zip(&self.nodes[s.0].data) {
            for v in row {
                data.push(v * sv);
            }
        }
        let rg = self.requires(x) || self.requires(s);
        self.push([m, n], data, rg, Op::ScaleRows(x, s))
    }

    /// Gram matrix xᵀx of an `m×n` tensor (result `n×n`).
    pub fn gram(&mut self, x: Var) -> Var {
        let [m, n] = self.shape(x);
        let src = &self.nodes[x.0].data;
        let mut data = vec![0.0; n * n];
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            for i in 0..n {
                let xi = row[i];
                if xi == 0.0 {
                    continue;
                }
                let out = &mut data[i * n..(i + 1) * n];
                for (o, &xj) in out.iter_mut().zip(row) {
                    *o += xi * xj;
                }
            }
        }
        let rg = self.requires(x);
        self.push([n, n], data, rg, Op::Gram(x))
    }

    pub fn reshape(&mut self, x: Var, shape: [usize; 2]) -> Var {
        let old = self.shape(x);
        assert_eq!(
            old[0] * old[1],
            shape[0] * shape[1],
            "reshape: cannot view {old:?} as {shape:?}"
        );
        let data = self.nodes[x.0].data.clone();
        let rg = self.requires(x);
        self.push(shape, data, rg, Op::Reshape(x))
    }

    /// Reverse pass from a scalar loss. Populates `grad` on every
    /// gradient-requiring node; trainable leaves not reachable from the loss
    /// get a zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != [1, 1] {
            return Err(Error::InvalidInput(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(dy) = grads[id].take() else {
                continue;
            };
            self.propagate(id, &dy, &mut grads);
            grads[id] = Some(dy);
        }

        for (id, node) in self.nodes.iter_mut().enumerate() {
            if node.requires_grad {
                node.grad = Some(
                    grads[id]
                        .take()
                        .unwrap_or_else(|| vec![0.0; node.data.len()]),
                );
            }
        }
        Ok(())
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Vec<f64>>],
        v: Var,
        contribution: impl FnOnce(&mut [f64]),
    ) {
        if !self.requires(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].data.len()]);
        contribution(slot);
    }

    fn propagate(&self, id: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |g| {
                    g.iter_mut().zip(dy).for_each(|(gi, d)| *gi += d)
                });
                self.accumulate(grads, *b, |g| {
                    g.iter_mut().zip(dy).for_each(|(gi, d)| *gi += d)
                });
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |g| {
                    g.iter_mut().zip(dy).for_each(|(gi, d)| *gi += d)
                });
                self.accumulate(grads, *b, |g| {
                    g.iter_mut().zip(dy).for_each(|(gi, d)| *gi -= d)
                });
            }
            Op::Mul(a, b) => {
                let (adata, bdata) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
                self.accumulate(grads, *a, |g| {
                    g.iter_mut()
                        .zip(dy)
                        .zip(bdata)
                        .for_each(|((gi, d), bv)| *gi += d * bv)
                });
                self.accumulate(grads, *b, |g| {
                    g.iter_mut()
                        .zip(dy)
                        .zip(adata)
                        .for_each(|((gi, d), av)| *gi += d * av)
                });
            }
            Op::ScalarMul(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, |g| {
                    g.iter_mut().zip(dy).for_each(|(gi, d)| *gi += c * d)
                });
            }
            Op::MulScalarVar(a, s) => {
                let c = self.nodes[s.0].data[0];
                let adata = &self.nodes[a.0].data;
                self.accumulate(grads, *a, |g| {
                    g.iter_mut().zip(dy).for_each(|(gi, d)| *gi += c * d)
                });
                self.accumulate(grads, *s, |g| {
                    g[0] += dy.iter().zip(adata).map(|(d, av)| d * av).sum::<f64>()
                });
            }
            Op::MatMul(a, b) => {
                let ([m, k], [_, n]) = (self.shape(*a), self.shape(*b));
                let (adata, bdata) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
                if self.requires(*a) {
                    // da = dy · bᵀ
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let dyrow = &dy[i * n..(i + 1) * n];
                        let darow = &mut da[i * k..(i + 1) * k];
                        for (p, dav) in darow.iter_mut().enumerate() {
                            let brow = &bdata[p * n..(p + 1) * n];
                            *dav = dyrow.iter().zip(brow).map(|(d, bv)| d * bv).sum();
                        }
                    }
                    self.accumulate(grads, *a, |g| {
                        g.iter_mut().zip(&da).for_each(|(gi, d)| *gi += d)
                    });
                }
                if self.requires(*b) {
                    // db = aᵀ · dy
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let dyrow = &dy[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = adata[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            let dbrow = &mut db[p * n..(p + 1) * n];
                            for (dbv, d) in dbrow.iter_mut().zip(dyrow) {
                                *dbv += av * d;
                            }
                        }
                    }
                    self.accumulate(grads, *b, |g| {
                        g.iter_mut().zip(&db).for_each(|(gi, d)| *gi += d)
                    });
                }
            }
            Op::SparseConstMatMul(s, x) => {
                if self.requires(*x) {
                    let [_, c] = self.shape(*x);
                    let mut dx = vec![0.0; self.nodes[x.0].data.len()];
                    s.transpose_matmul_dense_acc(dy, c, &mut dx);
                    self.accumulate(grads, *x, |g| {
                        g.iter_mut().zip(&dx).for_each(|(gi, d)| *gi += d)
                    });
                }
            }
            Op::AddRowBroadcast(x, bias) => {
                let n = self.shape(*x)[1];
                self.accumulate(grads, *x, |g| {
                    g.iter_mut().zip(dy).for_each(|(gi, d)| *gi += d)
                });
                self.accumulate(grads, *bias, |g| {
                    for row in dy.chunks(n) {
                        for (gi, d) in g.iter_mut().zip(row) {
                            *gi += d;
                        }
                    }
                });
            }
            Op::LeakyRelu(x, slope) => {
                let xdata = &self.nodes[x.0].data;
                let slope = *slope;
                self.accumulate(grads, *x, |g| {
                    for ((gi, d), &xv) in g.iter_mut().zip(dy).zip(xdata) {
                        *gi += d * if xv >= 0.0 { 1.0 } else { slope };
                    }
                });
            }
            Op::Tanh(x) => {
                let ydata = &node.data;
                self.accumulate(grads, *x, |g| {
                    for ((gi, d), y) in g.iter_mut().zip(dy).zip(ydata) {
                        *gi += d * (1.0 - y * y);
                    }
                });
            }
            Op::Exp(x) => {
                let ydata = &node.data;
                self.accumulate(grads, *x, |g| {
                    for ((gi, d), y) in g.iter_mut().zip(dy).zip(ydata) {
                        *gi += d * y;
                    }
                });
            }
            Op::Log(x) => {
                let xdata = &self.nodes[x.0].data;
                self.accumulate(grads, *x, |g| {
                    for ((gi, d), xv) in g.iter_mut().zip(dy).zip(xdata) {
                        *gi += d / (xv + LOG_GUARD);
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let [_, n] = node.shape;
                let ydata = &node.data;
                self.accumulate(grads, *x, |g| {
                    for ((grow, drow), yrow) in
                        g.chunks_mut(n).zip(dy.chunks(n)).zip(ydata.chunks(n))
                    {
                        let inner: f64 = drow.iter().zip(yrow).map(|(d, y)| d * y).sum();
                        for ((gi, d), y) in grow.iter_mut().zip(drow).zip(yrow) {
                            *gi += y * (d - inner);
                        }
                    }
                });
            }
            Op::Concat(parts, axis) => {
                if *axis == 0 {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p.0].data.len();
                        let seg = &dy[offset..offset + len];
                        self.accumulate(grads, p, |g| {
                            g.iter_mut().zip(seg).for_each(|(gi, d)| *gi += d)
                        });
                        offset += len;
                    }
                } else {
                    let total = node.shape[1];
                    let rows = node.shape[0];
                    let mut col = 0;
                    for &p in parts {
                        let w = self.shape(p)[1];
                        self.accumulate(grads, p, |g| {
                            for r in 0..rows {
                                let src = &dy[r * total + col..r * total + col + w];
                                for (gi, d) in g[r * w..(r + 1) * w].iter_mut().zip(src) {
                                    *gi += d;
                                }
                            }
                        });
                        col += w;
                    }
                }
            }
            Op::SliceCols(x, start) => {
                let n = self.shape(*x)[1];
                let w = node.shape[1];
                let start = *start;
                self.accumulate(grads, *x, |g| {
                    for (r, drow) in dy.chunks(w).enumerate() {
                        for (gi, d) in g[r * n + start..r * n + start + w].iter_mut().zip(drow) {
                            *gi += d;
                        }
                    }
                });
            }
            Op::Sum(x, axis) | Op::Mean(x, axis) => {
                let [m, n] = self.shape(*x);
                let scale = match (&node.op, axis) {
                    (Op::Sum(..), _) => 1.0,
                    (Op::Mean(..), None) => 1.0 / (m * n) as f64,
                    (Op::Mean(..), Some(0)) => 1.0 / m as f64,
                    (Op::Mean(..), Some(1)) => 1.0 / n as f64,
                    _ => unreachable!(),
                };
                self.accumulate(grads, *x, |g| match axis {
                    None => {
                        let d = dy[0] * scale;
                        g.iter_mut().for_each(|gi| *gi += d);
                    }
                    Some(0) => {
                        for grow in g.chunks_mut(n) {
                            for (gi, d) in grow.iter_mut().zip(dy) {
                                *gi += d * scale;
                            }
                        }
                    }
                    Some(1) => {
                        for (grow, d) in g.chunks_mut(n).zip(dy) {
                            grow.iter_mut().for_each(|gi| *gi += d * scale);
                        }
                    }
                    _ => unreachable!(),
                });
            }
            Op::L2NormalizeRows(x) => {
                let [_, n] = node.shape;
                let xdata = &self.nodes[x.0].data;
                let ydata = &node.data;
                self.accumulate(grads, *x, |g| {
                    for (((grow, drow), yrow), xrow) in g
                        .chunks_mut(n)
                        .zip(dy.chunks(n))
                        .zip(ydata.chunks(n))
                        .zip(xdata.chunks(n))
                    {
                        let norm = crate::dense::norm(xrow);
                        if norm < 1e-12 {
                            continue; // zero row stays at zero
                        }
                        let inner: f64 = drow.iter().zip(yrow).map(|(d, y)| d * y).sum();
                        for ((gi, d), y) in grow.iter_mut().zip(drow).zip(yrow) {
                            *gi += (d - y * inner) / norm;
                        }
                    }
                });
            }
            Op::StandardizeCols {
                input,
                scale,
                exact,
            } => {
                let [m, n] = node.shape;
                let ydata = &node.data;
                self.accumulate(grads, *input, |g| {
                    let mut mean_dy = vec![0.0; n];
                    let mut mean_dy_y = vec![0.0; n];
                    for (drow, yrow) in dy.chunks(n).zip(ydata.chunks(n)) {
                        for j in 0..n {
                            mean_dy[j] += drow[j];
                            mean_dy_y[j] += drow[j] * yrow[j];
                        }
                    }
                    for j in 0..n {
                        mean_dy[j] /= m as f64;
                        mean_dy_y[j] /= m as f64;
                    }
                    for (r, (drow, yrow)) in dy.chunks(n).zip(ydata.chunks(n)).enumerate() {
                        let grow = &mut g[r * n..(r + 1) * n];
                        for j in 0..n {
                            let centered = drow[j] - mean_dy[j];
                            let full = if exact[j] {
                                centered - yrow[j] * mean_dy_y[j]
                            } else {
                                centered // scale clamped to eps: treated as constant
                            };
                            grow[j] += full / scale[j];
                        }
                    }
                });
            }
            Op::ScaleRows(x, s) => {
                let [_, n] = node.shape;
                let xdata = &self.nodes[x.0].data;
                let sdata = &self.nodes[s.0].data;
                self.accumulate(grads, *x, |g| {
                    for ((grow, drow), sv) in g.chunks_mut(n).zip(dy.chunks(n)).zip(sdata) {
                        for (gi, d) in grow.iter_mut().zip(drow) {
                            *gi += d * sv;
                        }
                    }
                });
                self.accumulate(grads, *s, |g| {
                    for ((gi, drow), xrow) in g.iter_mut().zip(dy.chunks(n)).zip(xdata.chunks(n)) {
                        *gi += drow.iter().zip(xrow).map(|(d, xv)| d * xv).sum::<f64>();
                    }
                });
            }
            Op::Gram(x) => {
                let [m, n] = self.shape(*x);
                let xdata = &self.nodes[x.0].data;
                self.accumulate(grads, *x, |g| {
                    // dx = x (dy + dyᵀ)
                    for r in 0..m {
                        let xrow = &xdata[r * n..(r + 1) * n];
                        let grow = &mut g[r * n..(r + 1) * n];
                        for i in 0..n {
                            let xi = xrow[i];
                            if xi == 0.0 {
                                continue;
                            }
                            for (j, gj) in grow.iter_mut().enumerate() {
                                *gj += xi * (dy[i * n + j] + dy[j * n + i]);
                            }
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, |g| {
                    g.iter_mut().zip(dy).for_each(|(gi, d)| *gi += d)
                });
            }
        }
    }
}

/// Adam optimizer state for a fixed list of parameter tensors.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, param_sizes: &[usize]) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: param_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            second_moment: param_sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    /// Bias-corrected Adam update. Fails fast on non-finite gradients.
    pub fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[&[f64]]) -> Result<()> {
        assert_eq!(
            params.len(),
            self.first_moment.len(),
            "adam: parameter count changed"
        );
        assert_eq!(params.len(), grads.len(), "adam: gradient count mismatch");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(
            self.first_moment
                .iter_mut()
                .zip(self.second_moment.iter_mut()),
        ) {
            assert_eq!(p.len(), g.len(), "adam: shape mismatch");
            for i in 0..p.len() {
                let gi = g[i];
                if !gi.is_finite() {
                    return Err(Error::NonFinite {
                        what: "gradient".into(),
                        epoch: self.step as usize,
                    });
                }
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
