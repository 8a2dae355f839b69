//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! Every primitive pushes one node holding its output value and enough saved
//! state to replay the chain rule. [`Tape::backward`] walks the nodes in
//! reverse insertion order, which is a valid reverse topological order since
//! an op can only consume nodes that already exist.
//!
//! Broadcasting is limited to scalar-with-tensor in the binary elementwise
//! ops. Row-broadcast of a bias and per-row scaling are separate primitives
//! so that each gradient rule stays local and easy to audit.

use crate::tensor::{Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Op tags accepted by [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Sub,
    Mul,
    Relu,
    Tanh,
    Sigmoid,
    Softplus,
    Log,
    Exp,
    Abs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Relu,
    Tanh,
    Sigmoid,
    Softplus,
    Log,
    Exp,
    Abs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NormMode {
    #[default]
    Train,
    Eval,
}

/// Running statistics and hyperparameters of one batch-norm layer.
///
/// The learnable scale and shift live with the other parameters so the
/// optimizer sees them; they are passed to [`Tape::batch_norm`] as vars.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub mode: NormMode,
    /// Number of train-mode forward passes folded into the running stats.
    pub updates: u64,
}

impl BatchNormState {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(features: usize) -> Self {
        Self {
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
            mode: NormMode::Train,
            updates: 0,
        }
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }

    pub fn is_initialized(&self) -> bool {
        self.updates > 0
    }
}

enum Op {
    Leaf,
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Softmax(Var, usize),
    Reduce(ReduceOp, Var, usize),
    SumAll(Var),
    Concat(Vec<Var>, usize),
    Gather(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    SegmentSoftmax(Var, Vec<usize>),
    ScaleRows(Var, Var),
    Reshape(Var),
    SliceCols(Var, usize),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, with zeros for untouched nodes.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let shape = tape.value(v).shape().to_vec();
                let n = shape.iter().product();
                Tensor::from_parts(shape, vec![0.0; n])
            }
        }
    }
}

/// Single-owner record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn axis_split(shape: &[usize], axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::BadAxis {
            op,
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(TensorError::Domain {
            op,
            index,
            value: data[index],
        }),
        None => Ok(()),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// C (m×n) = op(A) · op(B) (+ C when `accumulate`), row-major buffers.
/// `a_t` / `b_t` read the stored matrix transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserts above bound every index dgemm touches given the
    // strides derived from (m, k, n).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf; it is differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t.with_grad(), Op::Leaf, true)
    }

    /// Records a constant leaf (never receives a gradient).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn elementwise(&mut self, op: ElemOp, x: Var, y: Option<Var>) -> Result<Var> {
        let unary = |u| -> Result<Unary> {
            if y.is_some() {
                return Err(TensorError::Invalid(format!("{op:?} takes one operand")));
            }
            Ok(u)
        };
        match op {
            ElemOp::Add | ElemOp::Sub | ElemOp::Mul => {
                let y = y.ok_or_else(|| TensorError::Invalid(format!("{op:?} needs two operands")))?;
                let b = match op {
                    ElemOp::Add => Binary::Add,
                    ElemOp::Sub => Binary::Sub,
                    _ => Binary::Mul,
                };
                self.binary(b, x, y)
            }
            ElemOp::Relu => self.unary(unary(Unary::Relu)?, x),
            ElemOp::Tanh => self.unary(unary(Unary::Tanh)?, x),
            ElemOp::Sigmoid => self.unary(unary(Unary::Sigmoid)?, x),
            ElemOp::Softplus => self.unary(unary(Unary::Softplus)?, x),
            ElemOp::Log => self.unary(unary(Unary::Log)?, x),
            ElemOp::Exp => self.unary(unary(Unary::Exp)?, x),
            ElemOp::Abs => self.unary(unary(Unary::Abs)?, x),
        }
    }

    fn unary(&mut self, u: Unary, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let name = match u {
            Unary::Relu => "relu",
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Softplus => "softplus",
            Unary::Log => "log",
            Unary::Exp => "exp",
            Unary::Abs => "abs",
        };
        if u == Unary::Log {
            if let Some(index) = xv.data().iter().position(|&v| v <= 0.0) {
                return Err(TensorError::Domain {
                    op: "log",
                    index,
                    value: xv.data()[index],
                });
            }
        }
        let f: fn(f64) -> f64 = match u {
            Unary::Relu => |v| v.max(0.0),
            Unary::Tanh => f64::tanh,
            Unary::Sigmoid => sigmoid,
            Unary::Softplus => softplus,
            Unary::Log => f64::ln,
            Unary::Exp => f64::exp,
            Unary::Abs => f64::abs,
        };
        let out: Vec<f64> = xv.data().iter().map(|&v| f(v)).collect();
        check_finite(name, &out)?;
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Unary(u, x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }
    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Softplus, x)
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Abs, x)
    }

    fn binary(&mut self, b: Binary, x: Var, y: Var) -> Result<Var> {
        let (xv, yv) = (self.value(x), self.value(y));
        let name = match b {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let f: fn(f64, f64) -> f64 = match b {
            Binary::Add => |a, c| a + c,
            Binary::Sub => |a, c| a - c,
            Binary::Mul => |a, c| a * c,
        };
        let (shape, out): (Vec<usize>, Vec<f64>) = if xv.shape() == yv.shape() {
            (
                xv.shape().to_vec(),
                xv.data().iter().zip(yv.data()).map(|(&a, &c)| f(a, c)).collect(),
            )
        } else if yv.is_scalar() {
            let c = yv.item();
            (xv.shape().to_vec(), xv.data().iter().map(|&a| f(a, c)).collect())
        } else if xv.is_scalar() {
            let a = xv.item();
            (yv.shape().to_vec(), yv.data().iter().map(|&c| f(a, c)).collect())
        } else {
            return Err(TensorError::ShapeMismatch {
                op: name,
                left: xv.shape().to_vec(),
                right: yv.shape().to_vec(),
            });
        };
        check_finite(name, &out)?;
        let rg = self.rg(&[x, y]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Binary(b, x, y), rg))
    }

    pub fn add(&mut self, x: Var, y: Var) -> Result<Var> {
        self.binary(Binary::Add, x, y)
    }
    pub fn sub(&mut self, x: Var, y: Var) -> Result<Var> {
        self.binary(Binary::Sub, x, y)
    }
    pub fn mul(&mut self, x: Var, y: Var) -> Result<Var> {
        self.binary(Binary::Mul, x, y)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let xv = self.value(x);
        let out: Vec<f64> = xv.data().iter().map(|&v| v + c).collect();
        check_finite("add_scalar", &out)?;
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::AddScalar(x), rg))
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let xv = self.value(x);
        let out: Vec<f64> = xv.data().iter().map(|&v| v * c).collect();
        check_finite("mul_scalar", &out)?;
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::MulScalar(x, c), rg))
    }

    /// `c - x`.
    pub fn rsub_scalar(&mut self, c: f64, x: Var) -> Result<Var> {
        let neg = self.mul_scalar(x, -1.0)?;
        self.add_scalar(neg, c)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, false);
        check_finite("matmul", &out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    /// `x[N,F] + bias[F]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if xv.rank() != 2 || bv.len() != xv.shape()[1] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                left: xv.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let f = bv.len();
        let out: Vec<f64> = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv.data()[i % f])
            .collect();
        check_finite("add_bias", &out)?;
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        let rg = self.rg(&[x, bias]);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    /// Softmax along `axis`, max-subtracted.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let (outer, len, inner) = axis_split(xv.shape(), axis, "softmax")?;
        let src = xv.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| o * len * inner + k * inner + i;
                let max = (0..len).map(|k| src[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..len {
                    let e = (src[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    z += e;
                }
                for k in 0..len {
                    out[idx(k)] /= z;
                }
            }
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Softmax(x, axis), rg))
    }

    /// Sum or mean along `axis`; the axis is removed (rank-1 inputs give `[1]`).
    pub fn reduce(&mut self, op: ReduceOp, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let (outer, len, inner) = axis_split(xv.shape(), axis, "reduce")?;
        let src = xv.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += src[o * len * inner + k * inner + i];
                }
            }
        }
        if op == ReduceOp::Mean {
            out.iter_mut().for_each(|v| *v /= len as f64);
        }
        let mut shape: Vec<usize> = xv.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Reduce(op, x, axis), rg))
    }

    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(ReduceOp::Sum, x, axis)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(vec![1], vec![s]), Op::SumAll(x), rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of nothing".into()))?;
        let base = self.value(*first).shape().to_vec();
        let (outer, _, inner) = axis_split(&base, axis, "concat")?;
        let mut total = 0;
        for v in xs {
            let s = self.value(*v).shape();
            let same_rank = s.len() == base.len();
            if !same_rank || s.iter().zip(&base).enumerate().any(|(d, (a, b))| d != axis && a != b) {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: base.clone(),
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in xs {
                let t = self.value(*v);
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(xs);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat(xs.to_vec(), axis), rg))
    }

    /// Row gather: output row `r` is `x[ids[r]]`.
    pub fn gather_rows(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        self.gather_named(x, ids, "gather_rows")
    }

    /// Embedding lookup from a `V×D` table; gradient scatters into table rows.
    pub fn lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_named(table, ids, "lookup")
    }

    fn gather_named(&mut self, x: Var, ids: &[usize], op: &'static str) -> Result<Var> {
        let xv = self.value(x);
        let rows = xv.rows();
        if ids.is_empty() {
            return Err(TensorError::Invalid(format!("{op}: empty id list")));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(TensorError::IndexOutOfRange {
                op,
                index: bad,
                bound: rows,
            });
        }
        let c = xv.cols();
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            out.extend_from_slice(xv.row(i));
        }
        let mut shape = xv.shape().to_vec();
        shape[0] = ids.len();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Gather(x, ids.to_vec()), rg))
    }

    fn check_segments(&self, op: &'static str, n: usize, lengths: &[usize]) -> Result<()> {
        if lengths.is_empty() || lengths.contains(&0) || lengths.iter().sum::<usize>() != n {
            return Err(TensorError::Invalid(format!(
                "{op}: segment lengths {lengths:?} do not partition {n} rows"
            )));
        }
        Ok(())
    }

    /// Sums consecutive row groups: `[N, D] -> [S, D]` for `S = lengths.len()`.
    pub fn segment_sum(&mut self, x: Var, lengths: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        self.check_segments("segment_sum", xv.rows(), lengths)?;
        let c = xv.cols();
        let mut out = vec![0.0; lengths.len() * c];
        let mut row = 0;
        for (s, &len) in lengths.iter().enumerate() {
            let dst = &mut out[s * c..(s + 1) * c];
            for r in row..row + len {
                for (d, v) in dst.iter_mut().zip(xv.row(r)) {
                    *d += v;
                }
            }
            row += len;
        }
        let mut shape = xv.shape().to_vec();
        shape[0] = lengths.len();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::SegmentSum(x, lengths.to_vec()),
            rg,
        ))
    }

    /// Softmax within each consecutive segment of a length-`N` vector.
    pub fn segment_softmax(&mut self, x: Var, lengths: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 1 {
            return Err(TensorError::Invalid(format!(
                "segment_softmax expects a vector, got {:?}",
                xv.shape()
            )));
        }
        self.check_segments("segment_softmax", xv.len(), lengths)?;
        let src = xv.data();
        let mut out = vec![0.0; src.len()];
        let mut start = 0;
        for &len in lengths {
            let seg = &src[start..start + len];
            let max = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (k, &v) in seg.iter().enumerate() {
                let e = (v - max).exp();
                out[start + k] = e;
                z += e;
            }
            out[start..start + len].iter_mut().for_each(|v| *v /= z);
            start += len;
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![src.len()], out),
            Op::SegmentSoftmax(x, lengths.to_vec()),
            rg,
        ))
    }

    /// Row `i` of `m[N, D]` times `s[i]`.
    pub fn scale_rows(&mut self, m: Var, s: Var) -> Result<Var> {
        let (mv, sv) = (self.value(m), self.value(s));
        if mv.rank() < 2 || sv.len() != mv.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                left: mv.shape().to_vec(),
                right: sv.shape().to_vec(),
            });
        }
        let c = mv.cols();
        let out: Vec<f64> = mv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * sv.data()[i / c])
            .collect();
        check_finite("scale_rows", &out)?;
        let value = Tensor::from_parts(mv.shape().to_vec(), out);
        let rg = self.rg(&[m, s]);
        Ok(self.push(value, Op::ScaleRows(m, s), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || len == 0 || start + len > xv.shape()[1] {
            return Err(TensorError::Invalid(format!(
                "slice_cols {start}..{} of {:?}",
                start + len,
                xv.shape()
            )));
        }
        let rows = xv.rows();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![rows, len], out),
            Op::SliceCols(x, start),
            rg,
        ))
    }

    /// Batch normalization over the rows of `x[N, F]`, dispatching on
    /// `state.mode`. Train mode folds batch statistics into the running
    /// averages; eval mode reads them and fails if they were never set.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, state: &mut BatchNormState) -> Result<Var> {
        match state.mode {
            NormMode::Train => self.batch_norm_train(x, gamma, beta, state),
            NormMode::Eval => self.batch_norm_eval(x, gamma, beta, state),
        }
    }

    fn check_bn(&self, x: Var, gamma: Var, beta: Var, features: usize) -> Result<(usize, usize)> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(TensorError::Invalid(format!("batch_norm expects a matrix, got {:?}", xv.shape())));
        }
        let (n, f) = (xv.shape()[0], xv.shape()[1]);
        for p in [gamma, beta] {
            if self.value(p).len() != f || features != f {
                return Err(TensorError::ShapeMismatch {
                    op: "batch_norm",
                    left: xv.shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
        }
        Ok((n, f))
    }

    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, state: &mut BatchNormState) -> Result<Var> {
        let (n, f) = self.check_bn(x, gamma, beta, state.features())?;
        let xv = self.value(x).data();
        let mut mean = vec![0.0; f];
        for r in 0..n {
            for j in 0..f {
                mean[j] += xv[r * f + j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; f];
        for r in 0..n {
            for j in 0..f {
                let d = xv[r * f + j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; n * f];
        let mut out = vec![0.0; n * f];
        for r in 0..n {
            for j in 0..f {
                let h = (xv[r * f + j] - mean[j]) * inv_std[j];
                xhat[r * f + j] = h;
                out[r * f + j] = g[j] * h + b[j];
            }
        }
        check_finite("batch_norm", &out)?;
        let m = state.momentum;
        let unbias = if n > 1 { n as f64 / (n as f64 - 1.0) } else { 1.0 };
        for j in 0..f {
            state.running_mean[j] = (1.0 - m) * state.running_mean[j] + m * mean[j];
            state.running_var[j] = (1.0 - m) * state.running_var[j] + m * var[j] * unbias;
        }
        state.updates += 1;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::from_parts(vec![n, f], out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: true,
            },
            rg,
        ))
    }

    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, state: &BatchNormState) -> Result<Var> {
        let (n, f) = self.check_bn(x, gamma, beta, state.features())?;
        if !state.is_initialized() {
            return Err(TensorError::Invalid(
                "batch_norm: eval mode before any train step".into(),
            ));
        }
        let xv = self.value(x).data();
        let inv_std: Vec<f64> = state
            .running_var
            .iter()
            .map(|v| 1.0 / (v + state.eps).sqrt())
            .collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; n * f];
        let mut out = vec![0.0; n * f];
        for r in 0..n {
            for j in 0..f {
                let h = (xv[r * f + j] - state.running_mean[j]) * inv_std[j];
                xhat[r * f + j] = h;
                out[r * f + j] = g[j] * h + b[j];
            }
        }
        check_finite("batch_norm", &out)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::from_parts(vec![n, f], out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: false,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `targets` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] != targets.len() {
            return Err(TensorError::Invalid(format!(
                "cross_entropy: logits {:?} vs {} targets",
                lv.shape(),
                targets.len()
            )));
        }
        let (n, c) = (lv.shape()[0], lv.shape()[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(TensorError::IndexOutOfRange {
                op: "cross_entropy",
                index: bad,
                bound: c,
            });
        }
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + z.ln();
            loss += lse - row[t];
            for (j, v) in row.iter().enumerate() {
                probs[r * c + j] = (v - lse).exp();
            }
        }
        loss /= n as f64;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::from_parts(vec![1], vec![loss]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut g: Vec<Option<Vec<f64>>> = Vec::new();
        g.resize_with(self.nodes.len(), || None);
        g[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(up) = g[idx].take() else { continue };
            self.propagate(node, &up, &mut g);
            g[idx] = Some(up);
        }

        let grads = g
            .into_iter()
            .zip(&self.nodes)
            .map(|(gr, node)| {
                gr.filter(|_| node.requires_grad)
                    .map(|v| Tensor::from_parts(node.value.shape().to_vec(), v))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn acc<'g>(&self, g: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(g[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, node: &Node, up: &[f64], g: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Unary(u, x) => {
                let xv = self.value(*x).data();
                if let Some(dx) = self.acc(g, *x) {
                    for i in 0..dx.len() {
                        let d = match u {
                            Unary::Relu => {
                                if xv[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Tanh => 1.0 - out[i] * out[i],
                            Unary::Sigmoid => out[i] * (1.0 - out[i]),
                            Unary::Softplus => sigmoid(xv[i]),
                            Unary::Log => 1.0 / xv[i],
                            Unary::Exp => out[i],
                            Unary::Abs => xv[i].signum() * f64::from(u8::from(xv[i] != 0.0)),
                        };
                        dx[i] += up[i] * d;
                    }
                }
            }
            Op::Binary(b, x, y) => {
                let (xv, yv) = (self.value(*x), self.value(*y));
                let n = out.len();
                let xs = xv.len() != n;
                let ys = yv.len() != n;
                let xat = |i: usize| if xs { xv.item() } else { xv.data()[i] };
                let yat = |i: usize| if ys { yv.item() } else { yv.data()[i] };
                let (dxf, dyf): (f64, f64) = match b {
                    Binary::Add => (1.0, 1.0),
                    Binary::Sub => (1.0, -1.0),
                    Binary::Mul => (0.0, 0.0),
                };
                if let Some(dx) = self.acc(g, *x) {
                    for i in 0..n {
                        let d = if *b == Binary::Mul { yat(i) } else { dxf };
                        dx[if xs { 0 } else { i }] += up[i] * d;
                    }
                }
                if let Some(dy) = self.acc(g, *y) {
                    for i in 0..n {
                        let d = if *b == Binary::Mul { xat(i) } else { dyf };
                        dy[if ys { 0 } else { i }] += up[i] * d;
                    }
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                if let Some(dx) = self.acc(g, *x) {
                    dx.iter_mut().zip(up).for_each(|(d, u)| *d += u);
                }
            }
            Op::MulScalar(x, c) => {
                if let Some(dx) = self.acc(g, *x) {
                    dx.iter_mut().zip(up).for_each(|(d, u)| *d += u * c);
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if let Some(da) = self.acc(g, *a) {
                    // dA = dC · Bᵀ
                    gemm(m, n, k, up, false, bv.data(), true, da, true);
                }
                if let Some(db) = self.acc(g, *b) {
                    // dB = Aᵀ · dC
                    gemm(k, m, n, av.data(), true, up, false, db, true);
                }
            }
            Op::AddBias(x, bias) => {
                if let Some(dx) = self.acc(g, *x) {
                    dx.iter_mut().zip(up).for_each(|(d, u)| *d += u);
                }
                if let Some(db) = self.acc(g, *bias) {
                    let f = db.len();
                    for (i, u) in up.iter().enumerate() {
                        db[i % f] += u;
                    }
                }
            }
            Op::Softmax(x, axis) => {
                if let Some(dx) = self.acc(g, *x) {
                    let (outer, len, inner) =
                        axis_split(node.value.shape(), *axis, "softmax").expect("validated in forward");
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |k: usize| o * len * inner + k * inner + i;
                            let dot: f64 = (0..len).map(|k| up[idx(k)] * out[idx(k)]).sum();
                            for k in 0..len {
                                dx[idx(k)] += out[idx(k)] * (up[idx(k)] - dot);
                            }
                        }
                    }
                }
            }
            Op::Reduce(op, x, axis) => {
                let shape = self.value(*x).shape().to_vec();
                if let Some(dx) = self.acc(g, *x) {
                    let (outer, len, inner) = axis_split(&shape, *axis, "reduce").expect("validated in forward");
                    let scale = if *op == ReduceOp::Mean { 1.0 / len as f64 } else { 1.0 };
                    for o in 0..outer {
                        for k in 0..len {
                            for i in 0..inner {
                                dx[o * len * inner + k * inner + i] += up[o * inner + i] * scale;
                            }
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(dx) = self.acc(g, *x) {
                    dx.iter_mut().for_each(|d| *d += up[0]);
                }
            }
            Op::Concat(xs, axis) => {
                let shape = node.value.shape();
                let (outer, total, inner) = axis_split(shape, *axis, "concat").expect("validated in forward");
                let mut offset = 0;
                for v in xs {
                    let len = self.value(*v).shape()[*axis];
                    if let Some(dv) = self.acc(g, *v) {
                        for o in 0..outer {
                            let src = &up[o * total * inner + offset * inner..o * total * inner + (offset + len) * inner];
                            let dst = &mut dv[o * len * inner..(o + 1) * len * inner];
                            dst.iter_mut().zip(src).for_each(|(d, u)| *d += u);
                        }
                    }
                    offset += len;
                }
            }
            Op::Gather(x, ids) => {
                let c = self.value(*x).cols();
                if let Some(dx) = self.acc(g, *x) {
                    for (r, &i) in ids.iter().enumerate() {
                        let dst = &mut dx[i * c..(i + 1) * c];
                        dst.iter_mut().zip(&up[r * c..(r + 1) * c]).for_each(|(d, u)| *d += u);
                    }
                }
            }
            Op::SegmentSum(x, lengths) => {
                let c = self.value(*x).cols();
                if let Some(dx) = self.acc(g, *x) {
                    let mut row = 0;
                    for (s, &len) in lengths.iter().enumerate() {
                        let src = &up[s * c..(s + 1) * c];
                        for r in row..row + len {
                            dx[r * c..(r + 1) * c].iter_mut().zip(src).for_each(|(d, u)| *d += u);
                        }
                        row += len;
                    }
                }
            }
            Op::SegmentSoftmax(x, lengths) => {
                if let Some(dx) = self.acc(g, *x) {
                    let mut start = 0;
                    for &len in lengths {
                        let r = start..start + len;
                        let dot: f64 = r.clone().map(|k| up[k] * out[k]).sum();
                        for k in r {
                            dx[k] += out[k] * (up[k] - dot);
                        }
                        start += len;
                    }
                }
            }
            Op::ScaleRows(m, s) => {
                let (mv, sv) = (self.value(*m), self.value(*s));
                let c = mv.cols();
                if let Some(dm) = self.acc(g, *m) {
                    for (i, d) in dm.iter_mut().enumerate() {
                        *d += up[i] * sv.data()[i / c];
                    }
                }
                if let Some(ds) = self.acc(g, *s) {
                    for (i, u) in up.iter().enumerate() {
                        ds[i / c] += u * mv.data()[i];
                    }
                }
            }
            Op::SliceCols(x, start) => {
                let total = self.value(*x).shape()[1];
                let len = node.value.shape()[1];
                if let Some(dx) = self.acc(g, *x) {
                    for r in 0..node.value.rows() {
                        let dst = &mut dx[r * total + start..r * total + start + len];
                        dst.iter_mut().zip(&up[r * len..(r + 1) * len]).for_each(|(d, u)| *d += u);
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (n, f) = (node.value.shape()[0], node.value.shape()[1]);
                let gv = self.value(*gamma).data();
                if let Some(dg) = self.acc(g, *gamma) {
                    for r in 0..n {
                        for j in 0..f {
                            dg[j] += up[r * f + j] * xhat[r * f + j];
                        }
                    }
                }
                if let Some(db) = self.acc(g, *beta) {
                    for r in 0..n {
                        for j in 0..f {
                            db[j] += up[r * f + j];
                        }
                    }
                }
                if let Some(dx) = self.acc(g, *x) {
                    if *batch_stats {
                        let mut sum_dh = vec![0.0; f];
                        let mut sum_dh_h = vec![0.0; f];
                        for r in 0..n {
                            for j in 0..f {
                                let dh = up[r * f + j] * gv[j];
                                sum_dh[j] += dh;
                                sum_dh_h[j] += dh * xhat[r * f + j];
                            }
                        }
                        let nf = n as f64;
                        for r in 0..n {
                            for j in 0..f {
                                let dh = up[r * f + j] * gv[j];
                                dx[r * f + j] += inv_std[j] / nf * (nf * dh - sum_dh[j] - xhat[r * f + j] * sum_dh_h[j]);
                            }
                        }
                    } else {
                        for r in 0..n {
                            for j in 0..f {
                                dx[r * f + j] += up[r * f + j] * gv[j] * inv_std[j];
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                if let Some(dl) = self.acc(g, *logits) {
                    let n = targets.len();
                    let c = probs.len() / n;
                    let scale = up[0] / n as f64;
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            dl[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                }
            }
        }
    }
}

/// Compares reverse-mode gradients of `f` against central differences
/// `(f(x+eps) - f(x-eps)) / (2 eps)` for every element of every input.
///
/// Returns the largest relative error `|a - n| / max(|a|, |n|, 1e-3)`.
/// The floor keeps near-zero gradients from turning round-off into a
/// spurious failure.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(&tape, *v);
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe[k].data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec()).unwrap()
    }

    #[test]
    fn relu_and_symmetric_points() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[-1.0, 0.0, 2.0]));
        let y = tape.elementwise(ElemOp::Relu, x, None).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let z = tape.constant(t(&[0.0]));
        let th = tape.tanh(z).unwrap();
        let sg = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(th).item(), 0.0);
        assert_eq!(tape.value(sg).item(), 0.5);
    }

    #[test]
    fn log_of_non_positive_is_domain_error() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1.0, 0.0]));
        assert!(matches!(tape.log(x), Err(TensorError::Domain { index: 1, .. })));
    }

    #[test]
    fn binary_shape_rules() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[1.0, 2.0]));
        let b = tape.constant(t(&[1.0, 2.0, 3.0]));
        let s = tape.constant(t(&[10.0]));
        assert!(tape.add(a, b).is_err());
        let y = tape.mul(s, a).unwrap();
        assert_eq!(tape.value(y).data(), &[10.0, 20.0]);
    }

    #[test]
    fn square_gradient_at_three() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[3.0]));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn unused_input_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[3.0]));
        let unused = tape.param(t(&[1.0, 2.0]));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(&tape, unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn matmul_small_products() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::identity(2).unwrap());
        let col = tape.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let y = tape.matmul(i2, col).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 4.0]);
        let row = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let z = tape.matmul(row, col).unwrap();
        assert_eq!(tape.value(z).data(), &[11.0]);
        assert!(tape.matmul(col, col).is_err());
    }

    #[test]
    fn softmax_reference_values() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1.0, 1.0, 1.0]));
        let y = tape.softmax(x, 0).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = tape.constant(t(&[0.0, 3f64.ln()]));
        let y = tape.softmax(x, 0).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] - 0.25).abs() < 1e-15 && (d[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn reduce_concat_lookup() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1.0, 2.0, 3.0]));
        let s = tape.sum(x, 0).unwrap();
        assert_eq!(tape.value(s).data(), &[6.0]);
        let a = tape.constant(t(&[1.0, 2.0]));
        let b = tape.constant(t(&[3.0, 4.0, 5.0]));
        let c = tape.concat(&[a, b], 0).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);

        let table = tape.param(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        assert!(matches!(tape.lookup(table, &[3]), Err(TensorError::IndexOutOfRange { .. })));
        let row = tape.lookup(table, &[1]).unwrap();
        let loss = tape.sum_all(row).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(table).unwrap().data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_reference_values() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::matrix(1, 4, vec![0.0; 4]).unwrap());
        let ce = tape.cross_entropy(l, &[2]).unwrap();
        assert!((tape.value(ce).item() - 4f64.ln()).abs() < 1e-12);
        let l = tape.constant(Tensor::matrix(1, 3, vec![0.0, 500.0, 0.0]).unwrap());
        let ce = tape.cross_entropy(l, &[1]).unwrap();
        assert!(tape.value(ce).item().abs() < 1e-12);
        assert!(tape.cross_entropy(l, &[3]).is_err());
    }

    #[test]
    fn batch_norm_constant_column_and_moments() {
        let mut tape = Tape::new();
        let mut st = BatchNormState::new(2);
        let x = tape.constant(Tensor::matrix(3, 2, vec![5.0, 1.0, 5.0, 2.0, 5.0, 6.0]).unwrap());
        let gamma = tape.constant(t(&[1.0, 1.0]));
        let beta = tape.constant(t(&[0.7, 0.0]));
        let y = tape.batch_norm(x, gamma, beta, &mut st).unwrap();
        let yv = tape.value(y);
        for r in 0..3 {
            assert!((yv.at(r, 0) - 0.7).abs() < 1e-12);
        }
        let col: Vec<f64> = (0..3).map(|r| yv.at(r, 1)).collect();
        let mean = col.iter().sum::<f64>() / 3.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
        assert_eq!(st.updates, 1);
        assert!(st.running_var.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn batch_norm_eval_needs_running_stats() {
        let mut tape = Tape::new();
        let mut st = BatchNormState::new(1);
        st.mode = NormMode::Eval;
        let x = tape.constant(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
        let g = tape.constant(t(&[1.0]));
        let b = tape.constant(t(&[0.0]));
        assert!(tape.batch_norm(x, g, b, &mut st).is_err());
    }

    #[test]
    fn segment_softmax_sums_per_segment() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1.0, 2.0, 3.0, -1.0, 0.5]));
        let y = tape.segment_softmax(x, &[2, 3]).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] + d[1] - 1.0).abs() < 1e-15);
        assert!((d[2] + d[3] + d[4] - 1.0).abs() < 1e-15);
        assert!(tape.segment_softmax(x, &[2, 2]).is_err());
    }
}
