//! Reverse-mode tape over [`Matrix`] values.
//!
//! Every operation appends a node holding its forward value and enough
//! information to push an output gradient back to its inputs. Leaves are
//! parameters or constants; the tape does not distinguish them, the caller
//! simply ignores gradients it does not need.

use std::sync::Arc;

use super::matrix::Matrix;
use crate::error::{F3Error, Result};

/// Lower clamp applied to probabilities before taking a log in
/// [`Tape::cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Entrywise functions with analytic derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Recip,
}

impl Unary {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Relu => x.max(0.0),
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Recip => 1.0 / x,
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Recip => -y * y,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Unary::Relu => "relu",
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Recip => "recip",
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Backward rule for an operation defined outside this module.
///
/// `inputs` are the forward values of the operation's inputs, in the order
/// they were passed to [`Tape::custom`]; the returned gradients must match
/// them in count and shape.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Matrix], output: &Matrix, grad: &Matrix) -> Vec<Matrix>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBroadcast(Var, Var),
    ScaleRows(Var, Var),
    ScaleCols(Var, Var),
    Scale(Var, f64),
    Unary(Var, Unary),
    SoftmaxRows(Var),
    CrossEntropy(Var, Arc<Vec<usize>>),
    Sum(Var),
    Mean(Var),
    Transpose(Var),
    Interleave(Vec<Var>),
    ConcatCols(Vec<Var>),
    BlockLeftMul(Var, Var),
    BlockMean(Var, usize),
    SelectRows(Var, Arc<Vec<usize>>),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Matrix,
    op: Op,
}

/// A single-threaded record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; exactly zero when `v` did not influence the output.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn get_opt(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.get(0, 0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(out, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Entrywise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds `bias` to every row of `a`; `bias` may be `1×c` or `c×1`.
    pub fn add_row_broadcast(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.len() != av.cols() || (bv.rows() != 1 && bv.cols() != 1) {
            return Err(F3Error::Shape {
                op: "add_row_broadcast",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let mut out = av.clone();
        let c = av.cols();
        for r in 0..av.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        debug_assert_eq!(out.cols(), c);
        Ok(self.push(out, Op::AddRowBroadcast(a, bias)))
    }

    /// Multiplies row `r` of `a` by `v[r]`; `v` is `r×1`.
    pub fn scale_rows(&mut self, a: Var, v: Var) -> Result<Var> {
        let (av, vv) = (self.value(a), self.value(v));
        if vv.len() != av.rows() {
            return Err(F3Error::Shape {
                op: "scale_rows",
                left: av.shape(),
                right: vv.shape(),
            });
        }
        let mut out = av.clone();
        for r in 0..av.rows() {
            let s = vv.data()[r];
            out.row_mut(r).iter_mut().for_each(|x| *x *= s);
        }
        Ok(self.push(out, Op::ScaleRows(a, v)))
    }

    /// Multiplies column `c` of `a` by `v[c]`; `v` is `1×c` or `c×1`.
    pub fn scale_cols(&mut self, a: Var, v: Var) -> Result<Var> {
        let (av, vv) = (self.value(a), self.value(v));
        if vv.len() != av.cols() {
            return Err(F3Error::Shape {
                op: "scale_cols",
                left: av.shape(),
                right: vv.shape(),
            });
        }
        let mut out = av.clone();
        for r in 0..av.rows() {
            for (o, s) in out.row_mut(r).iter_mut().zip(vv.data()) {
                *o *= s;
            }
        }
        Ok(self.push(out, Op::ScaleCols(a, v)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    /// Entrywise function; `log` and `recip` reject non-positive / zero
    /// entries with the offending index.
    pub fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let av = self.value(a);
        if matches!(kind, Unary::Log | Unary::Recip) {
            for r in 0..av.rows() {
                for c in 0..av.cols() {
                    let x = av.get(r, c);
                    let bad = match kind {
                        Unary::Log => !(x > 0.0),
                        _ => x == 0.0 || !x.is_finite(),
                    };
                    if bad {
                        return Err(F3Error::Domain {
                            op: kind.name(),
                            row: r,
                            col: c,
                            value: x,
                        });
                    }
                }
            }
        }
        let out = av.map(|x| kind.apply(x));
        Ok(self.push(out, Op::Unary(a, kind)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a).expect("relu has no domain restriction")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
            .expect("sigmoid has no domain restriction")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a).expect("tanh has no domain restriction")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a).expect("exp has no domain restriction")
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(F3Error::Shape {
                op: "softmax_rows",
                left: av.shape(),
                right: (1, 1),
            });
        }
        let out = softmax_rows(av);
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    /// Mean over rows of `-ln p[k, y_k]`, with `p` floored at [`PROB_FLOOR`].
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let pv = self.value(probs);
        if labels.len() != pv.rows() {
            return Err(F3Error::Shape {
                op: "cross_entropy",
                left: pv.shape(),
                right: (labels.len(), 1),
            });
        }
        let loss = cross_entropy(pv, labels)?;
        Ok(self.push(Matrix::scalar(loss), Op::CrossEntropy(probs, Arc::new(labels.to_vec()))))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.sum() / v.len() as f64;
        self.push(Matrix::scalar(s), Op::Mean(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    /// Stacks `k` equally shaped `B×c` blocks so that output row `b·k + i`
    /// is row `b` of block `i`.
    pub fn interleave(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| F3Error::Contract("interleave of nothing".into()))?;
        let (b, c) = self.value(first).shape();
        for &p in parts {
            self.value(first).require_same_shape(self.value(p), "interleave")?;
        }
        let k = parts.len();
        let mut out = Matrix::zeros(b * k, c);
        for (i, &p) in parts.iter().enumerate() {
            let pv = &self.nodes[p.0].value;
            for r in 0..b {
                out.row_mut(r * k + i).copy_from_slice(pv.row(r));
            }
        }
        Ok(self.push(out, Op::Interleave(parts.to_vec())))
    }

    /// Horizontal concatenation of blocks with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| F3Error::Contract("concat of nothing".into()))?;
        let rows = self.value(first).rows();
        let mut total = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(F3Error::Shape {
                    op: "concat_cols",
                    left: self.value(first).shape(),
                    right: pv.shape(),
                });
            }
            total += pv.cols();
        }
        let mut out = Matrix::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let pv = &self.nodes[p.0].value;
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Applies an `n×n` matrix to every consecutive `n`-row block of `x`.
    pub fn block_left_mul(&mut self, a: Var, x: Var) -> Result<Var> {
        let (av, xv) = (self.value(a), self.value(x));
        let n = av.rows();
        if av.cols() != n || n == 0 || xv.rows() % n != 0 {
            return Err(F3Error::Shape {
                op: "block_left_mul",
                left: av.shape(),
                right: xv.shape(),
            });
        }
        let out = block_left_mul(av, xv);
        Ok(self.push(out, Op::BlockLeftMul(a, x)))
    }

    /// Mean of every consecutive `block`-row group: `(B·block)×c → B×c`.
    pub fn block_mean(&mut self, x: Var, block: usize) -> Result<Var> {
        let xv = self.value(x);
        if block == 0 || xv.rows() % block != 0 {
            return Err(F3Error::Shape {
                op: "block_mean",
                left: xv.shape(),
                right: (block, 1),
            });
        }
        let b = xv.rows() / block;
        let mut out = Matrix::zeros(b, xv.cols());
        let inv = 1.0 / block as f64;
        for g in 0..b {
            let orow = out.row_mut(g);
            for r in 0..block {
                for (o, v) in orow.iter_mut().zip(xv.row(g * block + r)) {
                    *o += v * inv;
                }
            }
        }
        Ok(self.push(out, Op::BlockMean(x, block)))
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= av.rows()) {
            return Err(F3Error::Index {
                op: "select_rows",
                index: bad,
                limit: av.rows(),
            });
        }
        let out = av.select_rows(idx);
        Ok(self.push(out, Op::SelectRows(a, Arc::new(idx.to_vec()))))
    }

    /// Records an externally defined operation whose forward value has
    /// already been computed.
    pub fn custom(&mut self, inputs: &[Var], value: Matrix, op: Box<dyn CustomOp>) -> Var {
        self.push(value, Op::Custom(inputs.to_vec(), op))
    }

    /// Reverse sweep from a `1×1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let ov = self.value(output);
        if ov.shape() != (1, 1) {
            return Err(F3Error::Shape {
                op: "backward",
                left: ov.shape(),
                right: (1, 1),
            });
        }
        self.backward_with(output, Matrix::scalar(1.0))
    }

    /// Reverse sweep seeded with an arbitrary output gradient.
    pub fn backward_with(&self, output: Var, seed: Matrix) -> Result<Gradients> {
        self.value(output).require_same_shape(&seed, "backward_with")?;
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                accumulate(grads, *a, g.matmul_t(val(*b)).expect("shape checked on forward"));
                accumulate(grads, *b, val(*a).t_matmul(g).expect("shape checked on forward"));
            }
            Op::MatMulT(a, b) => {
                // out = a bᵀ: da = g b, db = gᵀ a
                accumulate(grads, *a, g.matmul(val(*b)).expect("shape checked on forward"));
                accumulate(grads, *b, g.t_matmul(val(*a)).expect("shape checked on forward"));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.hadamard(val(*b)).expect("shape checked on forward"));
                accumulate(grads, *b, g.hadamard(val(*a)).expect("shape checked on forward"));
            }
            Op::AddRowBroadcast(a, bias) => {
                accumulate(grads, *a, g.clone());
                let (br, bc) = val(*bias).shape();
                let gb = Matrix::from_vec(br, bc, g.col_sums()).expect("bias length checked on forward");
                accumulate(grads, *bias, gb);
            }
            Op::ScaleRows(a, v) => {
                let (av, vv) = (val(*a), val(*v));
                let mut ga = g.clone();
                let mut gv = vec![0.0; vv.len()];
                for r in 0..g.rows() {
                    let s = vv.data()[r];
                    gv[r] = g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum();
                    ga.row_mut(r).iter_mut().for_each(|x| *x *= s);
                }
                accumulate(grads, *a, ga);
                let (vr, vc) = vv.shape();
                accumulate(grads, *v, Matrix::from_vec(vr, vc, gv).expect("shape from forward"));
            }
            Op::ScaleCols(a, v) => {
                let (av, vv) = (val(*a), val(*v));
                let mut ga = g.clone();
                let mut gv = vec![0.0; vv.len()];
                for r in 0..g.rows() {
                    for (c, x) in ga.row_mut(r).iter_mut().enumerate() {
                        gv[c] += *x * av.get(r, c);
                        *x *= vv.data()[c];
                    }
                }
                accumulate(grads, *a, ga);
                let (vr, vc) = vv.shape();
                accumulate(grads, *v, Matrix::from_vec(vr, vc, gv).expect("shape from forward"));
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s)),
            Op::Unary(a, kind) => {
                let x = val(*a);
                let y = &node.value;
                let mut ga = g.clone();
                for ((gi, &xi), &yi) in ga.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                    *gi *= kind.derivative(xi, yi);
                }
                accumulate(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    for ((o, gi), yi) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = yi * (gi - dot);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::CrossEntropy(p, labels) => {
                let pv = val(*p);
                let scale = g.get(0, 0) / pv.rows() as f64;
                let mut gp = Matrix::zeros(pv.rows(), pv.cols());
                for (r, &y) in labels.iter().enumerate() {
                    let q = pv.get(r, y);
                    if q > PROB_FLOOR {
                        gp.set(r, y, -scale / q);
                    }
                }
                accumulate(grads, *p, gp);
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                accumulate(grads, *a, Matrix::filled(r, c, g.get(0, 0)));
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                accumulate(grads, *a, Matrix::filled(r, c, g.get(0, 0) / (r * c) as f64));
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::Interleave(parts) => {
                let k = parts.len();
                let b = g.rows() / k;
                for (i, &p) in parts.iter().enumerate() {
                    let idx: Vec<usize> = (0..b).map(|r| r * k + i).collect();
                    accumulate(grads, p, g.select_rows(&idx));
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    let gp = Matrix::from_fn(g.rows(), w, |r, c| g.get(r, offset + c));
                    accumulate(grads, p, gp);
                    offset += w;
                }
            }
            Op::BlockLeftMul(a, x) => {
                let (av, xv) = (val(*a), val(*x));
                let n = av.rows();
                let at = av.transpose();
                accumulate(grads, *x, block_left_mul(&at, g));
                // dA = Σ_blocks G_b X_bᵀ
                let mut ga = Matrix::zeros(n, n);
                let blocks = xv.rows() / n;
                for blk in 0..blocks {
                    for i in 0..n {
                        let grow = g.row(blk * n + i);
                        for j in 0..n {
                            let xrow = xv.row(blk * n + j);
                            let d: f64 = grow.iter().zip(xrow).map(|(p, q)| p * q).sum();
                            ga.data_mut()[i * n + j] += d;
                        }
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::BlockMean(x, block) => {
                let xv = val(*x);
                let inv = 1.0 / *block as f64;
                let gx = Matrix::from_fn(xv.rows(), xv.cols(), |r, c| g.get(r / block, c) * inv);
                accumulate(grads, *x, gx);
            }
            Op::SelectRows(a, idx) => {
                let (r, c) = val(*a).shape();
                let mut ga = Matrix::zeros(r, c);
                for (out_r, &src) in idx.iter().enumerate() {
                    for (o, v) in ga.row_mut(src).iter_mut().zip(g.row(out_r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Custom(inputs, op) => {
                let ins: Vec<&Matrix> = inputs.iter().map(|&v| val(v)).collect();
                let gs = op.backward(&ins, &node.value, g);
                assert_eq!(
                    gs.len(),
                    inputs.len(),
                    "custom op {} returned wrong gradient count",
                    op.name()
                );
                for (&v, gv) in inputs.iter().zip(gs) {
                    accumulate(grads, v, gv);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn block_left_mul(a: &Matrix, x: &Matrix) -> Matrix {
    let n = a.rows();
    let c = x.cols();
    let blocks = x.rows() / n;
    let mut out = Matrix::zeros(x.rows(), c);
    for blk in 0..blocks {
        for i in 0..n {
            for j in 0..n {
                let w = a.get(i, j);
                if w == 0.0 {
                    continue;
                }
                let src = blk * n + j;
                let dst = blk * n + i;
                for col in 0..c {
                    let v = x.get(src, col);
                    out.data_mut()[dst * c + col] += w * v;
                }
            }
        }
    }
    out
}

/// Row-wise softmax with max subtraction; every row sums to one.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
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

/// Mean negative log-likelihood of the labelled class, with a floor on the
/// probability.
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != probs.rows() {
        return Err(F3Error::Shape {
            op: "cross_entropy",
            left: probs.shape(),
            right: (labels.len(), 1),
        });
    }
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= probs.cols() {
            return Err(F3Error::Index {
                op: "cross_entropy",
                index: y,
                limit: probs.cols(),
            });
        }
        total -= probs.get(r, y).max(PROB_FLOOR).ln();
    }
    Ok(total / labels.len().max(1) as f64)
}

/// Entrywise application without recording; `log` rejects non-positive
/// entries.
pub fn elementwise(kind: Unary, m: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let v = tape.leaf(m.clone());
    let out = tape.unary(kind, v)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_m(r: usize, c: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::random_uniform(r, c, -2.0, 2.0, &mut rng)
    }

    /// Central-difference gradient of `f` at `x`.
    fn numeric_grad(x: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
        let h = 1e-6;
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        g
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-4))
            .fold(0.0, f64::max)
    }

    #[test]
    fn elementwise_examples() {
        let m = Matrix::row_vector(&[-1.0, 2.0]);
        assert_eq!(elementwise(Unary::Relu, &m).unwrap(), Matrix::row_vector(&[0.0, 2.0]));
        assert_eq!(
            elementwise(Unary::Sigmoid, &Matrix::scalar(0.0)).unwrap(),
            Matrix::scalar(0.5)
        );
    }

    #[test]
    fn log_domain_error_names_index() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, -1.0]]);
        match elementwise(Unary::Log, &m) {
            Err(F3Error::Domain { row, col, .. }) => assert_eq!((row, col), (1, 1)),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn matmul_gradient_is_ones_times_bt() {
        let a = rand_m(5, 4, 1);
        let b = rand_m(4, 3, 2);
        let mut tape = Tape::new();
        let av = tape.leaf(a.clone());
        let bv = tape.leaf(b.clone());
        let p = tape.matmul(av, bv).unwrap();
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        let expected = Matrix::ones(5, 3).matmul(&b.transpose()).unwrap();
        assert!(g.get(av).max_abs_diff(&expected) < 1e-12);
        let numeric = numeric_grad(&a, |x| x.matmul(&b).unwrap().sum());
        assert!(rel_err(&g.get(av), &numeric) < 1e-6);
    }

    #[test]
    fn tanh_gradient_matches_finite_differences() {
        let x = rand_m(3, 3, 7);
        let w = rand_m(3, 3, 8);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let wv = tape.leaf(w.clone());
        let t = tape.tanh(xv);
        let m = tape.mul(t, wv).unwrap();
        let s = tape.sum(m);
        let g = tape.backward(s).unwrap();
        let numeric = numeric_grad(&x, |x| x.map(f64::tanh).hadamard(&w).unwrap().sum());
        assert!(rel_err(&g.get(xv), &numeric) < 1e-6);
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&Matrix::row_vector(&[0.0, 0.0]));
        assert_eq!(s, Matrix::row_vector(&[0.5, 0.5]));
        let s = softmax_rows(&Matrix::row_vector(&[1000.0, 0.0]));
        assert!(s.is_finite());
        assert!((s.get(0, 0) - 1.0).abs() < 1e-15 && s.get(0, 1) < 1e-300);
    }

    #[test]
    fn softmax_jacobian_matches_finite_differences() {
        let x = rand_m(1, 5, 11);
        let w = rand_m(1, 5, 12);
        for out_idx in 0..5 {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let s = tape.softmax_rows(xv).unwrap();
            let sel = Matrix::from_fn(1, 5, |_, c| if c == out_idx { 1.0 } else { 0.0 });
            let g = tape.backward_with(s, sel).unwrap();
            let numeric = numeric_grad(&x, |x| softmax_rows(x).get(0, out_idx));
            assert!(rel_err(&g.get(xv), &numeric) < 1e-5, "column {out_idx}");
        }
        let _ = w;
    }

    #[test]
    fn cross_entropy_examples() {
        let onehot = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(cross_entropy(&onehot, &[0, 1]).unwrap() <= 1e-10);
        let uniform = Matrix::filled(4, 3, 1.0 / 3.0);
        assert!((cross_entropy(&uniform, &[0, 1, 2, 0]).unwrap() - 3f64.ln()).abs() < 1e-12);
        assert!(matches!(
            cross_entropy(&uniform, &[0, 1, 5, 0]),
            Err(F3Error::Index { .. })
        ));
    }

    #[test]
    fn cross_entropy_matches_scalar_loop() {
        let logits = rand_m(6, 4, 21);
        let p = softmax_rows(&logits);
        let labels = [0, 3, 2, 1, 1, 0];
        let mut expect = 0.0;
        for r in 0..6 {
            let row: Vec<f64> = (0..4).map(|c| logits.get(r, c)).collect();
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            expect += -(row[labels[r]].exp() / z).ln();
        }
        expect /= 6.0;
        assert!((cross_entropy(&p, &labels).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn unused_leaf_gets_exact_zero() {
        let mut tape = Tape::new();
        let a = tape.leaf(rand_m(2, 2, 3));
        let unused = tape.leaf(rand_m(3, 1, 4));
        let s = tape.sum(a);
        let g = tape.backward(s).unwrap();
        assert!(g.get_opt(unused).is_none());
        assert_eq!(g.get(unused), Matrix::zeros(3, 1));
    }

    #[test]
    fn structural_ops_gradients() {
        // interleave + block ops + select rows + concat, checked against
        // finite differences of an explicit composite.
        let a = rand_m(3, 2, 31);
        let b = rand_m(3, 2, 32);
        let adj = rand_m(2, 2, 33);
        let w = rand_m(6, 4, 34);
        let f = |a: &Matrix, b: &Matrix, adj: &Matrix| -> f64 {
            let mut tape = Tape::new();
            let (av, bv, jv) = (tape.leaf(a.clone()), tape.leaf(b.clone()), tape.leaf(adj.clone()));
            let x = tape.interleave(&[av, bv]).unwrap();
            let y = tape.block_left_mul(jv, x).unwrap();
            let c = tape.concat_cols(&[y, x]).unwrap();
            let wv = tape.leaf(w.clone());
            let m = tape.mul(c, wv).unwrap();
            let bm = tape.block_mean(m, 2).unwrap();
            let sel = tape.select_rows(bm, &[2, 0, 2]).unwrap();
            let t = tape.tanh(sel);
            let s = tape.sum(t);
            tape.scalar_value(s)
        };
        let mut tape = Tape::new();
        let (av, bv, jv) = (tape.leaf(a.clone()), tape.leaf(b.clone()), tape.leaf(adj.clone()));
        let x = tape.interleave(&[av, bv]).unwrap();
        let y = tape.block_left_mul(jv, x).unwrap();
        let c = tape.concat_cols(&[y, x]).unwrap();
        let wv = tape.leaf(w.clone());
        let m = tape.mul(c, wv).unwrap();
        let bm = tape.block_mean(m, 2).unwrap();
        let sel = tape.select_rows(bm, &[2, 0, 2]).unwrap();
        let t = tape.tanh(sel);
        let s = tape.sum(t);
        let g = tape.backward(s).unwrap();
        assert!(rel_err(&g.get(av), &numeric_grad(&a, |x| f(x, &b, &adj))) < 1e-6);
        assert!(rel_err(&g.get(bv), &numeric_grad(&b, |x| f(&a, x, &adj))) < 1e-6);
        assert!(rel_err(&g.get(jv), &numeric_grad(&adj, |x| f(&a, &b, x))) < 1e-6);
    }

    #[test]
    fn broadcast_and_scaling_gradients() {
        let a = rand_m(4, 3, 41);
        let bias = rand_m(3, 1, 42);
        let rs = rand_m(4, 1, 43);
        let cs = rand_m(1, 3, 44);
        let f = |a: &Matrix, bias: &Matrix, rs: &Matrix, cs: &Matrix| -> f64 {
            let mut t = Tape::new();
            let (a, b, r, c) = (
                t.leaf(a.clone()),
                t.leaf(bias.clone()),
                t.leaf(rs.clone()),
                t.leaf(cs.clone()),
            );
            let x = t.add_row_broadcast(a, b).unwrap();
            let x = t.scale_rows(x, r).unwrap();
            let x = t.scale_cols(x, c).unwrap();
            let x = t.sigmoid(x);
            let x = t.transpose(x);
            let s = t.mean(x);
            t.scalar_value(s)
        };
        let mut t = Tape::new();
        let (av, bv, rv, cv) = (
            t.leaf(a.clone()),
            t.leaf(bias.clone()),
            t.leaf(rs.clone()),
            t.leaf(cs.clone()),
        );
        let x = t.add_row_broadcast(av, bv).unwrap();
        let x = t.scale_rows(x, rv).unwrap();
        let x = t.scale_cols(x, cv).unwrap();
        let x = t.sigmoid(x);
        let x = t.transpose(x);
        let s = t.mean(x);
        let g = t.backward(s).unwrap();
        assert!(rel_err(&g.get(av), &numeric_grad(&a, |x| f(x, &bias, &rs, &cs))) < 1e-6);
        assert!(rel_err(&g.get(bv), &numeric_grad(&bias, |x| f(&a, x, &rs, &cs))) < 1e-6);
        assert!(rel_err(&g.get(rv), &numeric_grad(&rs, |x| f(&a, &bias, x, &cs))) < 1e-6);
        assert!(rel_err(&g.get(cv), &numeric_grad(&cs, |x| f(&a, &bias, &rs, x))) < 1e-6);
    }
}
