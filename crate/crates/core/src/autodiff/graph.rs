//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! the gradient of every node that depends on a trainable leaf.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::param::Parameter;
use super::tensor::{dot, Tensor};
use crate::error::{LatteError, Result};

/// Handle to a node on a [`Graph`]. Only meaningful for the graph that made it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sentinel in gather index tables: the output cell is zero.
pub const GATHER_ZERO: u32 = u32::MAX;

/// Sparse, constant row-combination matrix: `out[o] += w * in[i]`.
#[derive(Clone, Debug, Default)]
pub struct RowMix {
    pub out_rows: usize,
    pub entries: Vec<(u32, u32, f64)>,
}

impl RowMix {
    pub fn new(out_rows: usize) -> Self {
        Self {
            out_rows,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, out_row: usize, in_row: usize, weight: f64) {
        self.entries.push((out_row as u32, in_row as u32, weight));
    }

    /// Selects `rows` of the input in order.
    pub fn select(rows: &[usize]) -> Self {
        let mut mix = Self::new(rows.len());
        for (o, &i) in rows.iter().enumerate() {
            mix.push(o, i, 1.0);
        }
        mix
    }

    /// Places input row `k` at output row `rows[k]`; other rows stay zero.
    pub fn scatter(rows: &[usize], out_rows: usize) -> Self {
        let mut mix = Self::new(out_rows);
        for (i, &o) in rows.iter().enumerate() {
            mix.push(o, i, 1.0);
        }
        mix
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum UnaryKind {
    Neg,
    Exp,
    Ln,
    Sqrt,
    Relu,
    Square,
    Abs,
    Cosh,
    Sinh,
    Recip,
    AcoshClamped,
    SinhcSq,
    AsinhcSq,
    Scale(f64),
    Offset(f64),
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Linear(Var, Var),
    MatMul(Var, Var),
    Binary(BinaryKind, Var, Var, Bcast),
    Unary(UnaryKind, Var),
    SumCols(Var),
    SumRows(Var),
    SumAll(Var),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    Gather(Var, Rc<Vec<u32>>),
    RowMix(Var, Rc<RowMix>),
    GroupMatMulT(Var, Var, usize),
    GroupMatMul(Var, Var, usize),
    Softmax(Var),
    CrossEntropy(Var, Rc<Vec<usize>>),
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Linear(..) => "linear",
            Op::MatMul(..) => "matmul",
            Op::Binary(k, ..) => match k {
                BinaryKind::Add => "add",
                BinaryKind::Sub => "sub",
                BinaryKind::Mul => "mul",
                BinaryKind::Div => "div",
            },
            Op::Unary(k, _) => match k {
                UnaryKind::Neg => "neg",
                UnaryKind::Exp => "exp",
                UnaryKind::Ln => "ln",
                UnaryKind::Sqrt => "sqrt",
                UnaryKind::Relu => "relu",
                UnaryKind::Square => "square",
                UnaryKind::Abs => "abs",
                UnaryKind::Cosh => "cosh",
                UnaryKind::Sinh => "sinh",
                UnaryKind::Recip => "recip",
                UnaryKind::AcoshClamped => "acosh",
                UnaryKind::SinhcSq => "sinhc_sq",
                UnaryKind::AsinhcSq => "asinhc_sq",
                UnaryKind::Scale(_) => "scale",
                UnaryKind::Offset(_) => "offset",
            },
            Op::SumCols(_) => "sum_cols",
            Op::SumRows(_) => "sum_rows",
            Op::SumAll(_) => "sum_all",
            Op::Concat(_) => "concat",
            Op::Slice(..) => "slice",
            Op::Gather(..) => "gather",
            Op::RowMix(..) => "row_mix",
            Op::GroupMatMulT(..) => "group_matmul_t",
            Op::GroupMatMul(..) => "group_matmul",
            Op::Softmax(_) => "softmax",
            Op::CrossEntropy(..) => "cross_entropy",
            Op::Reshape(_) => "reshape",
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    bindings: HashMap<String, Var>,
}

/// One forward pass worth of recorded operations.
#[derive(Default)]
pub struct Graph {
    inner: RefCell<Inner>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    bindings: HashMap<String, Var>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a parameter bound with [`Graph::param`].
    pub fn for_param(&self, name: &str) -> Option<&Tensor> {
        self.bindings.get(name).and_then(|v| self.wrt(*v))
    }

    /// Names of every trainable parameter bound on the graph.
    pub fn bound_names(&self) -> impl Iterator<Item = &str> {
        self.bindings.keys().map(|s| s.as_str())
    }

    /// Adds each bound parameter's gradient into its buffer and marks it
    /// touched. Parameters that were bound but unreachable from the loss are
    /// touched with a zero gradient.
    pub fn accumulate<'a>(&self, params: impl IntoIterator<Item = &'a mut Parameter>) {
        for p in params {
            if let Some(v) = self.bindings.get(&p.name) {
                if let Some(g) = self.wrt(*v) {
                    p.grad.add_assign(g);
                }
                p.touched = true;
            }
        }
    }
}

fn unary_forward(kind: UnaryKind, x: f64) -> f64 {
    match kind {
        UnaryKind::Neg => -x,
        UnaryKind::Exp => x.exp(),
        UnaryKind::Ln => x.ln(),
        UnaryKind::Sqrt => x.sqrt(),
        UnaryKind::Relu => x.max(0.0),
        UnaryKind::Square => x * x,
        UnaryKind::Abs => x.abs(),
        UnaryKind::Cosh => x.cosh(),
        UnaryKind::Sinh => x.sinh(),
        UnaryKind::Recip => 1.0 / x,
        UnaryKind::AcoshClamped => x.max(1.0).acosh(),
        UnaryKind::SinhcSq => sinhc_sq(x),
        UnaryKind::AsinhcSq => asinhc_sq(x),
        UnaryKind::Scale(c) => x * c,
        UnaryKind::Offset(c) => x + c,
    }
}

fn unary_derivative(kind: UnaryKind, x: f64, y: f64) -> f64 {
    match kind {
        UnaryKind::Neg => -1.0,
        UnaryKind::Exp => y,
        UnaryKind::Ln => 1.0 / x,
        UnaryKind::Sqrt => 0.5 / y,
        UnaryKind::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        UnaryKind::Square => 2.0 * x,
        UnaryKind::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        UnaryKind::Cosh => x.sinh(),
        UnaryKind::Sinh => x.cosh(),
        UnaryKind::Recip => -y * y,
        UnaryKind::AcoshClamped => {
            if x <= 1.0 {
                0.0
            } else {
                1.0 / (x * x - 1.0).sqrt()
            }
        }
        UnaryKind::SinhcSq => sinhc_sq_derivative(x),
        UnaryKind::AsinhcSq => asinhc_sq_derivative(x),
        UnaryKind::Scale(c) => c,
        UnaryKind::Offset(_) => 1.0,
    }
}

const SERIES_CUTOFF: f64 = 1e-3;

/// `sinh(√u)/√u`, smooth through `u = 0`.
pub fn sinhc_sq(u: f64) -> f64 {
    let u = u.max(0.0);
    if u < SERIES_CUTOFF {
        1.0 + u / 6.0 + u * u / 120.0 + u * u * u / 5040.0
    } else {
        let s = u.sqrt();
        s.sinh() / s
    }
}

fn sinhc_sq_derivative(u: f64) -> f64 {
    let u = u.max(0.0);
    if u < SERIES_CUTOFF {
        1.0 / 6.0 + u / 60.0 + u * u / 1680.0
    } else {
        let s = u.sqrt();
        (s * s.cosh() - s.sinh()) / (2.0 * s * s * s)
    }
}

/// `asinh(√u)/√u`, smooth through `u = 0`.
pub fn asinhc_sq(u: f64) -> f64 {
    let u = u.max(0.0);
    if u < SERIES_CUTOFF {
        1.0 - u / 6.0 + 3.0 * u * u / 40.0 - 5.0 * u * u * u / 112.0
    } else {
        let s = u.sqrt();
        s.asinh() / s
    }
}

fn asinhc_sq_derivative(u: f64) -> f64 {
    let u = u.max(0.0);
    if u < SERIES_CUTOFF {
        -1.0 / 6.0 + 3.0 * u / 20.0 - 15.0 * u * u / 112.0 + 35.0 * u * u * u / 288.0
    } else {
        let s = u.sqrt();
        (s / (1.0 + u).sqrt() - s.asinh()) / (2.0 * s * s * s)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var(inner.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let inner = self.inner.borrow();
        vars.iter().any(|v| inner.nodes[v.0].needs_grad)
    }

    /// Shared handle to a node's value.
    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.inner.borrow().nodes[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.inner.borrow().nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.inner.borrow().nodes[v.0].needs_grad
    }

    /// A leaf that receives a gradient.
    pub fn input(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Binds a parameter. Frozen parameters enter as constants; a parameter
    /// bound twice returns the first node.
    pub fn param(&self, p: &Parameter) -> Var {
        if let Some(v) = self.inner.borrow().bindings.get(&p.name) {
            return *v;
        }
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
        if p.trainable {
            self.inner.borrow_mut().bindings.insert(p.name.clone(), v);
        }
        v
    }

    /// `x · wᵀ` with `x: [n, in]`, `w: [out, in]`.
    pub fn linear(&self, x: Var, w: Var) -> Var {
        let out = self.value(x).matmul_t(&self.value(w));
        let ng = self.needs(&[x, w]);
        self.push(out, Op::Linear(x, w), ng)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(&self.value(b));
        let ng = self.needs(&[a, b]);
        self.push(out, Op::MatMul(a, b), ng)
    }

    fn binary(&self, kind: BinaryKind, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let (r, c) = av.shape();
        let bc = match bv.shape() {
            s if s == (r, c) => Bcast::Same,
            (1, 1) => Bcast::Scalar,
            (1, bcols) if bcols == c => Bcast::Row,
            (brows, 1) if brows == r => Bcast::Col,
            s => panic!(
                "{} with incompatible shapes {:?} and {:?}",
                match kind {
                    BinaryKind::Add => "add",
                    BinaryKind::Sub => "sub",
                    BinaryKind::Mul => "mul",
                    BinaryKind::Div => "div",
                },
                (r, c),
                s
            ),
        };
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let a_data = av.data();
        let b_data = bv.data();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                let y = match bc {
                    Bcast::Same => b_data[i * c + j],
                    Bcast::Scalar => b_data[0],
                    Bcast::Row => b_data[j],
                    Bcast::Col => b_data[i],
                };
                out.push(f(a_data[i * c + j], y));
            }
        }
        let ng = self.needs(&[a, b]);
        self.push(Tensor::from_vec(r, c, out), Op::Binary(kind, a, b, bc), ng)
    }

    /// Elementwise `a + b`; `b` may broadcast as a row, column or scalar.
    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(BinaryKind::Div, a, b)
    }

    fn unary(&self, kind: UnaryKind, x: Var) -> Var {
        let out = self.value(x).map(|v| unary_forward(kind, v));
        let ng = self.needs(&[x]);
        self.push(out, Op::Unary(kind, x), ng)
    }

    pub fn neg(&self, x: Var) -> Var {
        self.unary(UnaryKind::Neg, x)
    }
    pub fn exp(&self, x: Var) -> Var {
        self.unary(UnaryKind::Exp, x)
    }
    pub fn ln(&self, x: Var) -> Var {
        self.unary(UnaryKind::Ln, x)
    }
    pub fn sqrt(&self, x: Var) -> Var {
        self.unary(UnaryKind::Sqrt, x)
    }
    pub fn relu(&self, x: Var) -> Var {
        self.unary(UnaryKind::Relu, x)
    }
    pub fn square(&self, x: Var) -> Var {
        self.unary(UnaryKind::Square, x)
    }
    pub fn abs(&self, x: Var) -> Var {
        self.unary(UnaryKind::Abs, x)
    }
    pub fn cosh(&self, x: Var) -> Var {
        self.unary(UnaryKind::Cosh, x)
    }
    pub fn sinh(&self, x: Var) -> Var {
        self.unary(UnaryKind::Sinh, x)
    }
    pub fn recip(&self, x: Var) -> Var {
        self.unary(UnaryKind::Recip, x)
    }
    /// `acosh(max(1, x))`, with zero gradient inside the clamped region.
    pub fn acosh_clamped(&self, x: Var) -> Var {
        self.unary(UnaryKind::AcoshClamped, x)
    }
    /// `sinh(√u)/√u`.
    pub fn sinhc_sq(&self, u: Var) -> Var {
        self.unary(UnaryKind::SinhcSq, u)
    }
    /// `asinh(√u)/√u`.
    pub fn asinhc_sq(&self, u: Var) -> Var {
        self.unary(UnaryKind::AsinhcSq, u)
    }
    pub fn scale(&self, x: Var, c: f64) -> Var {
        self.unary(UnaryKind::Scale(c), x)
    }
    pub fn offset(&self, x: Var, c: f64) -> Var {
        self.unary(UnaryKind::Offset(c), x)
    }

    /// Row sums, `[n, c] -> [n, 1]`.
    pub fn sum_cols(&self, x: Var) -> Var {
        let xv = self.value(x);
        let out: Vec<f64> = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let ng = self.needs(&[x]);
        self.push(Tensor::from_vec(xv.rows(), 1, out), Op::SumCols(x), ng)
    }

    /// Column sums, `[n, c] -> [1, c]`.
    pub fn sum_rows(&self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = vec![0.0; xv.cols()];
        for r in 0..xv.rows() {
            for (o, v) in out.iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        let ng = self.needs(&[x]);
        self.push(Tensor::from_vec(1, xv.cols(), out), Op::SumRows(x), ng)
    }

    pub fn sum_all(&self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), ng)
    }

    pub fn mean_all(&self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let values: Vec<Rc<Tensor>> = parts.iter().map(|v| self.value(*v)).collect();
        let rows = values[0].rows();
        assert!(
            values.iter().all(|t| t.rows() == rows),
            "concat_cols with differing row counts"
        );
        let cols: usize = values.iter().map(|t| t.cols()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for t in &values {
                out.extend_from_slice(t.row(r));
            }
        }
        let ng = self.needs(parts);
        self.push(
            Tensor::from_vec(rows, cols, out),
            Op::Concat(parts.to_vec()),
            ng,
        )
    }

    /// Columns `start..end`.
    pub fn slice_cols(&self, x: Var, start: usize, end: usize) -> Var {
        let xv = self.value(x);
        assert!(start <= end && end <= xv.cols(), "slice out of range");
        let w = end - start;
        let mut out = Vec::with_capacity(xv.rows() * w);
        for r in 0..xv.rows() {
            out.extend_from_slice(&xv.row(r)[start..end]);
        }
        let ng = self.needs(&[x]);
        self.push(
            Tensor::from_vec(xv.rows(), w, out),
            Op::Slice(x, start, end),
            ng,
        )
    }

    /// `out.flat[k] = x.flat[index[k]]`, or zero where `index[k] == GATHER_ZERO`.
    pub fn gather(&self, x: Var, rows: usize, cols: usize, index: Rc<Vec<u32>>) -> Var {
        assert_eq!(index.len(), rows * cols, "gather index length");
        let xv = self.value(x);
        let src = xv.data();
        let out: Vec<f64> = index
            .iter()
            .map(|&i| {
                if i == GATHER_ZERO {
                    0.0
                } else {
                    src[i as usize]
                }
            })
            .collect();
        let ng = self.needs(&[x]);
        self.push(Tensor::from_vec(rows, cols, out), Op::Gather(x, index), ng)
    }

    pub fn row_mix(&self, x: Var, mix: Rc<RowMix>) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = Tensor::zeros(mix.out_rows, c);
        for &(o, i, w) in &mix.entries {
            let src = xv.row(i as usize);
            let dst = out.row_mut(o as usize);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
        let ng = self.needs(&[x]);
        self.push(out, Op::RowMix(x, mix), ng)
    }

    pub fn select_rows(&self, x: Var, rows: &[usize]) -> Var {
        self.row_mix(x, Rc::new(RowMix::select(rows)))
    }

    /// Per group `g`: `A_g · B_gᵀ`, with `a: [G·p, m]`, `b: [G·q, m]` and
    /// output `[G·p, q]`.
    pub fn group_matmul_t(&self, a: Var, b: Var, groups: usize) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.cols(), bv.cols());
        assert!(av.rows().is_multiple_of(groups) && bv.rows().is_multiple_of(groups));
        let p = av.rows() / groups;
        let q = bv.rows() / groups;
        let mut out = Tensor::zeros(av.rows(), q);
        for g in 0..groups {
            for i in 0..p {
                let ar = av.row(g * p + i);
                for j in 0..q {
                    let v = dot(ar, bv.row(g * q + j));
                    out.set(g * p + i, j, v);
                }
            }
        }
        let ng = self.needs(&[a, b]);
        self.push(out, Op::GroupMatMulT(a, b, groups), ng)
    }

    /// Per group `g`: `A_g · B_g`, with `a: [G·p, q]`, `b: [G·q, m]` and
    /// output `[G·p, m]`.
    pub fn group_matmul(&self, a: Var, b: Var, groups: usize) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert!(av.rows().is_multiple_of(groups) && bv.rows().is_multiple_of(groups));
        let p = av.rows() / groups;
        let q = bv.rows() / groups;
        assert_eq!(av.cols(), q, "group_matmul inner dimension");
        let m = bv.cols();
        let mut out = Tensor::zeros(av.rows(), m);
        for g in 0..groups {
            for i in 0..p {
                for j in 0..q {
                    let w = av.get(g * p + i, j);
                    let src = bv.row(g * q + j);
                    let dst = out.row_mut(g * p + i);
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
        let ng = self.needs(&[a, b]);
        self.push(out, Op::GroupMatMul(a, b, groups), ng)
    }

    pub fn softmax_rows(&self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.rows(), xv.cols());
        for r in 0..xv.rows() {
            softmax_into(xv.row(r), out.row_mut(r));
        }
        let ng = self.needs(&[x]);
        self.push(out, Op::Softmax(x), ng)
    }

    /// Batch-mean softmax cross-entropy of `logits: [n, classes]`.
    pub fn cross_entropy(&self, logits: Var, labels: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), labels.len(), "one label per row");
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = lv.row(r);
            assert!(y < row.len(), "label {y} out of range");
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let ng = self.needs(&[logits]);
        self.push(
            Tensor::scalar(total / labels.len() as f64),
            Op::CrossEntropy(logits, Rc::new(labels.to_vec())),
            ng,
        )
    }

    pub fn reshape(&self, x: Var, rows: usize, cols: usize) -> Var {
        let out = (*self.value(x)).clone().reshape(rows, cols);
        let ng = self.needs(&[x]);
        self.push(out, Op::Reshape(x), ng)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let inner = self.inner.borrow();
        let nodes = &inner.nodes;
        let lv = &nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(LatteError::InvalidArgument(format!(
                "backward needs a scalar loss, got {:?}",
                lv.shape()
            )));
        }
        if !lv.item().is_finite() {
            let culprit = nodes[..=loss.0]
                .iter()
                .enumerate()
                .find(|(_, n)| !n.value.all_finite())
                .map(|(i, n)| format!("node {i} ({})", n.op.name()))
                .unwrap_or_else(|| "loss".to_string());
            return Err(LatteError::NonFinite(format!(
                "loss is {}; first non-finite intermediate: {culprit}",
                lv.item()
            )));
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let val = |v: Var| -> &Tensor { &nodes[v.0].value };
            let wants = |v: Var| nodes[v.0].needs_grad;
            let acc = |v: Var, g: Tensor, grads: &mut Vec<Option<Tensor>>| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            };

            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(gout);
                    continue;
                }
                Op::Linear(x, w) => {
                    if wants(*x) {
                        acc(*x, gout.matmul(val(*w)), &mut grads);
                    }
                    if wants(*w) {
                        acc(*w, gout.t_matmul(val(*x)), &mut grads);
                    }
                }
                Op::MatMul(a, b) => {
                    if wants(*a) {
                        acc(*a, gout.matmul_t(val(*b)), &mut grads);
                    }
                    if wants(*b) {
                        acc(*b, val(*a).t_matmul(&gout), &mut grads);
                    }
                }
                Op::Binary(kind, a, b, bc) => {
                    let av = val(*a);
                    let bv = val(*b);
                    let (r, c) = av.shape();
                    let bidx = |i: usize, j: usize| match bc {
                        Bcast::Same => i * c + j,
                        Bcast::Scalar => 0,
                        Bcast::Row => j,
                        Bcast::Col => i,
                    };
                    let gd = gout.data();
                    let ad = av.data();
                    let bd = bv.data();
                    if wants(*a) {
                        let mut ga = vec![0.0; r * c];
                        for i in 0..r {
                            for j in 0..c {
                                let k = i * c + j;
                                let y = bd[bidx(i, j)];
                                ga[k] = match kind {
                                    BinaryKind::Add | BinaryKind::Sub => gd[k],
                                    BinaryKind::Mul => gd[k] * y,
                                    BinaryKind::Div => gd[k] / y,
                                };
                            }
                        }
                        acc(*a, Tensor::from_vec(r, c, ga), &mut grads);
                    }
                    if wants(*b) {
                        let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                        let gbd = gb.data_mut();
                        for i in 0..r {
                            for j in 0..c {
                                let k = i * c + j;
                                let bi = bidx(i, j);
                                let y = bd[bi];
                                gbd[bi] += match kind {
                                    BinaryKind::Add => gd[k],
                                    BinaryKind::Sub => -gd[k],
                                    BinaryKind::Mul => gd[k] * ad[k],
                                    BinaryKind::Div => -gd[k] * ad[k] / (y * y),
                                };
                            }
                        }
                        acc(*b, gb, &mut grads);
                    }
                }
                Op::Unary(kind, x) => {
                    let xv = val(*x);
                    let yv = &node.value;
                    let g: Vec<f64> = gout
                        .data()
                        .iter()
                        .zip(xv.data())
                        .zip(yv.data())
                        .map(|((g, &xi), &yi)| g * unary_derivative(*kind, xi, yi))
                        .collect();
                    acc(*x, Tensor::from_vec(xv.rows(), xv.cols(), g), &mut grads);
                }
                Op::SumCols(x) => {
                    let (r, c) = val(*x).shape();
                    let g = Tensor::from_fn(r, c, |i, _| gout.get(i, 0));
                    acc(*x, g, &mut grads);
                }
                Op::SumRows(x) => {
                    let (r, c) = val(*x).shape();
                    let g = Tensor::from_fn(r, c, |_, j| gout.get(0, j));
                    acc(*x, g, &mut grads);
                }
                Op::SumAll(x) => {
                    let (r, c) = val(*x).shape();
                    acc(*x, Tensor::filled(r, c, gout.item()), &mut grads);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (r, c) = val(*p).shape();
                        if wants(*p) {
                            let g = Tensor::from_fn(r, c, |i, j| gout.get(i, offset + j));
                            acc(*p, g, &mut grads);
                        }
                        offset += c;
                    }
                }
                Op::Slice(x, start, end) => {
                    let (r, c) = val(*x).shape();
                    let mut g = Tensor::zeros(r, c);
                    for i in 0..r {
                        g.row_mut(i)[*start..*end].copy_from_slice(gout.row(i));
                    }
                    acc(*x, g, &mut grads);
                }
                Op::Gather(x, index) => {
                    let (r, c) = val(*x).shape();
                    let mut g = Tensor::zeros(r, c);
                    let gd = g.data_mut();
                    for (k, &i) in index.iter().enumerate() {
                        if i != GATHER_ZERO {
                            gd[i as usize] += gout.data()[k];
                        }
                    }
                    acc(*x, g, &mut grads);
                }
                Op::RowMix(x, mix) => {
                    let (r, c) = val(*x).shape();
                    let mut g = Tensor::zeros(r, c);
                    for &(o, i, w) in &mix.entries {
                        let src = gout.row(o as usize);
                        let dst = g.row_mut(i as usize);
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                    acc(*x, g, &mut grads);
                }
                Op::GroupMatMulT(a, b, groups) => {
                    let av = val(*a);
                    let bv = val(*b);
                    let p = av.rows() / groups;
                    let q = bv.rows() / groups;
                    if wants(*a) {
                        let mut ga = Tensor::zeros(av.rows(), av.cols());
                        for g in 0..*groups {
                            for i in 0..p {
                                for j in 0..q {
                                    let w = gout.get(g * p + i, j);
                                    let src = bv.row(g * q + j);
                                    let dst = ga.row_mut(g * p + i);
                                    for (d, s) in dst.iter_mut().zip(src) {
                                        *d += w * s;
                                    }
                                }
                            }
                        }
                        acc(*a, ga, &mut grads);
                    }
                    if wants(*b) {
                        let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                        for g in 0..*groups {
                            for i in 0..p {
                                for j in 0..q {
                                    let w = gout.get(g * p + i, j);
                                    let src = av.row(g * p + i);
                                    let dst = gb.row_mut(g * q + j);
                                    for (d, s) in dst.iter_mut().zip(src) {
                                        *d += w * s;
                                    }
                                }
                            }
                        }
                        acc(*b, gb, &mut grads);
                    }
                }
                Op::GroupMatMul(a, b, groups) => {
                    let av = val(*a);
                    let bv = val(*b);
                    let p = av.rows() / groups;
                    let q = bv.rows() / groups;
                    if wants(*a) {
                        let mut ga = Tensor::zeros(av.rows(), av.cols());
                        for g in 0..*groups {
                            for i in 0..p {
                                for j in 0..q {
                                    let v = dot(gout.row(g * p + i), bv.row(g * q + j));
                                    ga.set(g * p + i, j, v);
                                }
                            }
                        }
                        acc(*a, ga, &mut grads);
                    }
                    if wants(*b) {
                        let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                        for g in 0..*groups {
                            for i in 0..p {
                                for j in 0..q {
                                    let w = av.get(g * p + i, j);
                                    let src = gout.row(g * p + i);
                                    let dst = gb.row_mut(g * q + j);
                                    for (d, s) in dst.iter_mut().zip(src) {
                                        *d += w * s;
                                    }
                                }
                            }
                        }
                        acc(*b, gb, &mut grads);
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let (r, c) = y.shape();
                    let mut g = Tensor::zeros(r, c);
                    for i in 0..r {
                        let yr = y.row(i);
                        let gr = gout.row(i);
                        let s = dot(yr, gr);
                        for (k, o) in g.row_mut(i).iter_mut().enumerate() {
                            *o = yr[k] * (gr[k] - s);
                        }
                    }
                    acc(*x, g, &mut grads);
                }
                Op::CrossEntropy(x, labels) => {
                    let lv = val(*x);
                    let (r, c) = lv.shape();
                    let scale = gout.item() / r as f64;
                    let mut g = Tensor::zeros(r, c);
                    for i in 0..r {
                        softmax_into(lv.row(i), g.row_mut(i));
                        g.row_mut(i)[labels[i]] -= 1.0;
                        for v in g.row_mut(i) {
                            *v *= scale;
                        }
                    }
                    acc(*x, g, &mut grads);
                }
                Op::Reshape(x) => {
                    let (r, c) = val(*x).shape();
                    acc(*x, gout.reshape(r, c), &mut grads);
                }
            }
        }

        Ok(Gradients {
            grads,
            bindings: inner.bindings.clone(),
        })
    }
}

fn softmax_into(row: &[f64], out: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, v) in out.iter_mut().zip(row) {
        *o = (v - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let g = Graph::new();
        let p = g.input(Tensor::row_vector(&[1.0, -2.0, 0.5]));
        let loss = g.scale(g.sum_all(g.square(p)), 0.5);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(p).unwrap().data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let g = Graph::new();
        let a = g.input(Tensor::scalar(2.0));
        let c = g.constant(Tensor::scalar(3.0));
        let loss = g.mul(a, c);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(a).unwrap().item(), 3.0);
        assert!(grads.wrt(c).is_none());
    }

    #[test]
    fn non_finite_loss_names_first_bad_node() {
        let g = Graph::new();
        let a = g.input(Tensor::scalar(-1.0));
        let b = g.sqrt(a);
        let loss = g.sum_all(b);
        let err = g.backward(loss).unwrap_err().to_string();
        assert!(err.contains("sqrt"), "{err}");
    }

    #[test]
    fn series_branches_are_continuous() {
        for f in [
            sinhc_sq,
            asinhc_sq,
            sinhc_sq_derivative,
            asinhc_sq_derivative,
        ] {
            let below = f(SERIES_CUTOFF * (1.0 - 1e-9));
            let above = f(SERIES_CUTOFF * (1.0 + 1e-9));
            assert!((below - above).abs() < 1e-12, "{below} vs {above}");
        }
        assert_eq!(sinhc_sq(0.0), 1.0);
        assert_eq!(asinhc_sq(0.0), 1.0);
    }
}
