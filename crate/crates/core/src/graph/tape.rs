use std::sync::Arc;

use super::{GraphError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Fixed 0/1 connectivity mask for [`Op::MaskedAffine`], laid out like the
/// weight matrix it multiplies (`in x out`).
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    data: Arc<[f64]>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(GraphError::DataLength {
                shape: vec![rows, cols],
                len: bits.len(),
            });
        }
        let data: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Ok(Self {
            rows,
            cols,
            data: data.into(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c] != 0.0
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Differentiable operations understood by the tape.
///
/// Axis conventions for rank-2 inputs: axis 0 reduces over rows (result
/// `1 x cols`), axis 1 reduces over columns (result `rows x 1`).
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Tanh,
    Exp,
    Log,
    Pow(f64),
    Relu,
    Sigmoid,
    Softplus,
    Neg,
    Sum,
    SumAxis(usize),
    Mean,
    MeanAxis(usize),
    /// Population variance (divisor n) along an axis.
    Variance(usize),
    Concat(usize),
    Slice {
        axis: usize,
        start: usize,
        end: usize,
    },
    /// `x W + b` with `b` broadcast over rows.
    Affine,
    /// `x (W * M) + b` for a fixed mask `M`.
    MaskedAffine(Mask),
    /// Repeats a `1 x c` row `n` times.
    BroadcastRows(usize),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::MatMul => "matmul",
            Op::Tanh => "tanh",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Pow(_) => "pow",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Softplus => "softplus",
            Op::Neg => "neg",
            Op::Sum => "sum",
            Op::SumAxis(_) => "sum_axis",
            Op::Mean => "mean",
            Op::MeanAxis(_) => "mean_axis",
            Op::Variance(_) => "variance",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Affine => "affine",
            Op::MaskedAffine(_) => "masked_affine",
            Op::BroadcastRows(_) => "broadcast_rows",
        }
    }
}

struct Node {
    value: Tensor,
    op: Option<Op>,
    inputs: Vec<Var>,
    requires_grad: bool,
}

/// Append-only record of a forward computation, replayed in reverse by
/// [`Tape::backward`]. A tape supports exactly one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

type Result<T> = std::result::Result<T, GraphError>;

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

    /// Records a leaf. Its `requires_grad` flag decides whether backward
    /// produces a gradient for it.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad();
        self.push(t.detached(), None, Vec::new(), requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.detached(), None, Vec::new(), false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass for a leaf created with
    /// `requires_grad`. Unreached leaves report zeros.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor, op: Option<Op>, inputs: Vec<Var>, rg: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    /// Evaluates `op` on `inputs` and records the result.
    pub fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        let arity = match op {
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::MatMul => 2,
            Op::Affine | Op::MaskedAffine(_) => 3,
            Op::Concat(_) => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(GraphError::Arity {
                op: op.name(),
                expected: arity,
                got: inputs.len(),
            });
        }
        let value = self.evaluate(&op, inputs)?;
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, Some(op), inputs.to_vec(), rg))
    }

    fn evaluate(&self, op: &Op, inputs: &[Var]) -> Result<Tensor> {
        let x = &self.nodes[inputs[0].0].value;
        match op {
            Op::Add => self.binary(op, inputs, |a, b| a + b),
            Op::Sub => self.binary(op, inputs, |a, b| a - b),
            Op::Mul => self.binary(op, inputs, |a, b| a * b),
            Op::Div => {
                let d = &self.nodes[inputs[1].0].value;
                if d.data().iter().any(|&v| v == 0.0) {
                    return Err(GraphError::Domain {
                        op: "div",
                        detail: "division by zero".into(),
                    });
                }
                self.binary(op, inputs, |a, b| a / b)
            }
            Op::MatMul => {
                let b = &self.nodes[inputs[1].0].value;
                let (n, k) = matrix_dims("matmul", x)?;
                let (k2, m) = matrix_dims("matmul", b)?;
                if k != k2 {
                    return Err(shape_err("matmul", x, b));
                }
                Tensor::matrix(n, m, gemm(x.data(), b.data(), n, k, m))
            }
            Op::Tanh => Ok(map(x, f64::tanh)),
            Op::Exp => Ok(map(x, f64::exp)),
            Op::Log => {
                if let Some(bad) = x.data().iter().find(|&&v| !(v > 0.0)) {
                    return Err(GraphError::Domain {
                        op: "log",
                        detail: format!("non-positive operand {bad}"),
                    });
                }
                Ok(map(x, f64::ln))
            }
            Op::Pow(p) => {
                if p.fract() != 0.0 && x.data().iter().any(|&v| v < 0.0) {
                    return Err(GraphError::Domain {
                        op: "pow",
                        detail: format!("negative base with fractional exponent {p}"),
                    });
                }
                let p = *p;
                if p == 2.0 {
                    Ok(map(x, |v| v * v))
                } else {
                    Ok(map(x, |v| v.powf(p)))
                }
            }
            Op::Relu => Ok(map(x, |v| v.max(0.0))),
            Op::Sigmoid => Ok(map(x, sigmoid)),
            Op::Softplus => Ok(map(x, softplus)),
            Op::Neg => Ok(map(x, |v| -v)),
            Op::Sum => Ok(Tensor::scalar(x.data().iter().sum())),
            Op::Mean => {
                if x.numel() == 0 {
                    return Err(GraphError::Empty("mean"));
                }
                Ok(Tensor::scalar(x.data().iter().sum::<f64>() / x.numel() as f64))
            }
            Op::SumAxis(axis) => reduce_axis("sum_axis", x, *axis, |s, _| s),
            Op::MeanAxis(axis) => reduce_axis("mean_axis", x, *axis, |s, n| s / n as f64),
            Op::Variance(axis) => variance_axis(x, *axis),
            Op::Concat(axis) => {
                let parts: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                concat(&parts, *axis)
            }
            Op::Slice { axis, start, end } => slice(x, *axis, *start, *end),
            Op::Affine | Op::MaskedAffine(_) => {
                let w = &self.nodes[inputs[1].0].value;
                let b = &self.nodes[inputs[2].0].value;
                let (n, k) = matrix_dims(op.name(), x)?;
                let (k2, m) = matrix_dims(op.name(), w)?;
                if k != k2 {
                    return Err(shape_err(op.name(), x, w));
                }
                if b.numel() != m {
                    return Err(shape_err(op.name(), w, b));
                }
                let mut out = if let Op::MaskedAffine(mask) = op {
                    if mask.rows != k || mask.cols != m {
                        return Err(GraphError::ShapeMismatch {
                            op: "masked_affine",
                            lhs: w.shape().to_vec(),
                            rhs: vec![mask.rows, mask.cols],
                        });
                    }
                    let eff = masked(w.data(), mask);
                    gemm(x.data(), &eff, n, k, m)
                } else {
                    gemm(x.data(), w.data(), n, k, m)
                };
                for row in out.chunks_mut(m.max(1)) {
                    for (o, bv) in row.iter_mut().zip(b.data()) {
                        *o += bv;
                    }
                }
                Tensor::matrix(n, m, out)
            }
            Op::BroadcastRows(n) => {
                let (r, c) = matrix_dims("broadcast_rows", x)?;
                if r != 1 {
                    return Err(GraphError::ShapeMismatch {
                        op: "broadcast_rows",
                        lhs: x.shape().to_vec(),
                        rhs: vec![1, c],
                    });
                }
                let mut data = Vec::with_capacity(n * c);
                for _ in 0..*n {
                    data.extend_from_slice(x.data());
                }
                Tensor::matrix(*n, c, data)
            }
        }
    }

    fn binary(&self, op: &Op, inputs: &[Var], f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let a = &self.nodes[inputs[0].0].value;
        let b = &self.nodes[inputs[1].0].value;
        if a.shape() == b.shape() {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape().to_vec(), data)
        } else if b.is_scalar() {
            let y = b.item();
            Ok(map(a, |x| f(x, y)))
        } else if a.is_scalar() {
            let x = a.item();
            Ok(map(b, |y| f(x, y)))
        } else {
            Err(shape_err(op.name(), a, b))
        }
    }

    /// Reverse pass from a scalar `loss`. Gradients of `requires_grad` leaves
    /// become available through [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(GraphError::TapeConsumed);
        }
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(GraphError::NonScalarLoss(lv.shape().to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(op) = node.op.as_ref() else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let contribs = self.input_grads(op, &node.inputs, &node.value, &g);
            for (input, contrib) in node.inputs.iter().zip(contribs) {
                if let Some(c) = contrib {
                    accumulate(&mut grads[input.0], c);
                }
            }
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.op.is_none() && node.requires_grad && grads[idx].is_none() {
                grads[idx] = Some(vec![0.0; node.value.numel()]);
            } else if node.op.is_some() {
                grads[idx] = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn input_grads(&self, op: &Op, inputs: &[Var], out: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let val = |i: usize| &self.nodes[inputs[i].0].value;
        let need = |i: usize| self.nodes[inputs[i].0].requires_grad;
        match op {
            Op::Add | Op::Sub | Op::Mul | Op::Div => {
                let a = val(0);
                let b = val(1);
                let n = out.numel();
                let av = |i: usize| if a.numel() == n { a.data()[i] } else { a.item() };
                let bv = |i: usize| if b.numel() == n { b.data()[i] } else { b.item() };
                let (da, db): (Box<dyn Fn(usize) -> f64>, Box<dyn Fn(usize) -> f64>) = match op {
                    Op::Add => (Box::new(|i| g[i]), Box::new(|i| g[i])),
                    Op::Sub => (Box::new(|i| g[i]), Box::new(|i| -g[i])),
                    Op::Mul => (Box::new(|i| g[i] * bv(i)), Box::new(|i| g[i] * av(i))),
                    _ => (
                        Box::new(|i| g[i] / bv(i)),
                        Box::new(|i| -g[i] * av(i) / (bv(i) * bv(i))),
                    ),
                };
                let ga = need(0).then(|| reduce_broadcast(a.numel(), n, &*da));
                let gb = need(1).then(|| reduce_broadcast(b.numel(), n, &*db));
                vec![ga, gb]
            }
            Op::MatMul => {
                let a = val(0);
                let b = val(1);
                let (n, k) = (a.rows(), a.cols());
                let m = b.cols();
                let ga = need(0).then(|| gemm_nt(g, b.data(), n, m, k));
                let gb = need(1).then(|| gemm_tn(a.data(), g, n, k, m));
                vec![ga, gb]
            }
            Op::Tanh => vec![Some(zip_map(g, out.data(), |g, y| g * (1.0 - y * y)))],
            Op::Exp => vec![Some(zip_map(g, out.data(), |g, y| g * y))],
            Op::Log => vec![Some(zip_map(g, val(0).data(), |g, x| g / x))],
            Op::Pow(p) => {
                let p = *p;
                vec![Some(zip_map(g, val(0).data(), |g, x| {
                    if p == 2.0 {
                        2.0 * g * x
                    } else {
                        g * p * x.powf(p - 1.0)
                    }
                }))]
            }
            Op::Relu => vec![Some(zip_map(g, val(0).data(), |g, x| if x > 0.0 { g } else { 0.0 }))],
            Op::Sigmoid => vec![Some(zip_map(g, out.data(), |g, y| g * y * (1.0 - y)))],
            Op::Softplus => vec![Some(zip_map(g, val(0).data(), |g, x| g * sigmoid(x)))],
            Op::Neg => vec![Some(g.iter().map(|v| -v).collect())],
            Op::Sum => vec![Some(vec![g[0]; val(0).numel()])],
            Op::Mean => {
                let n = val(0).numel();
                vec![Some(vec![g[0] / n as f64; n])]
            }
            Op::SumAxis(axis) | Op::MeanAxis(axis) => {
                let x = val(0);
                let (r, c) = (x.rows(), x.cols());
                let scale = match op {
                    Op::MeanAxis(_) => 1.0 / if *axis == 0 { r } else { c } as f64,
                    _ => 1.0,
                };
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        let gi = if *axis == 0 { g[j] } else { g[i] };
                        gx[i * c + j] = gi * scale;
                    }
                }
                vec![Some(gx)]
            }
            Op::Variance(axis) => {
                let x = val(0);
                let (r, c) = (x.rows(), x.cols());
                let means = reduce_axis("variance", x, *axis, |s, n| s / n as f64)
                    .expect("validated in forward");
                let count = if *axis == 0 { r } else { c } as f64;
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        let k = if *axis == 0 { j } else { i };
                        gx[i * c + j] = g[k] * 2.0 * (x.get(i, j) - means.data()[k]) / count;
                    }
                }
                vec![Some(gx)]
            }
            Op::Concat(axis) => {
                let mut out_grads = Vec::with_capacity(inputs.len());
                let total_cols = out.cols();
                let mut offset = 0;
                for (i, _) in inputs.iter().enumerate() {
                    let t = val(i);
                    let (r, c) = (t.rows(), t.cols());
                    if !need(i) {
                        out_grads.push(None);
                    } else if *axis == 0 {
                        out_grads.push(Some(g[offset * c..(offset + r) * c].to_vec()));
                    } else {
                        let mut gi = Vec::with_capacity(r * c);
                        for row in 0..r {
                            let base = row * total_cols + offset;
                            gi.extend_from_slice(&g[base..base + c]);
                        }
                        out_grads.push(Some(gi));
                    }
                    offset += if *axis == 0 { r } else { c };
                }
                out_grads
            }
            Op::Slice { axis, start, .. } => {
                let x = val(0);
                let (r, c) = (x.rows(), x.cols());
                let (or, oc) = (out.rows(), out.cols());
                let mut gx = vec![0.0; r * c];
                for i in 0..or {
                    for j in 0..oc {
                        let (si, sj) = if *axis == 0 { (i + start, j) } else { (i, j + start) };
                        gx[si * c + sj] = g[i * oc + j];
                    }
                }
                vec![Some(gx)]
            }
            Op::Affine | Op::MaskedAffine(_) => {
                let x = val(0);
                let w = val(1);
                let (n, k) = (x.rows(), x.cols());
                let m = w.cols();
                let eff;
                let w_used: &[f64] = if let Op::MaskedAffine(mask) = op {
                    eff = masked(w.data(), mask);
                    &eff
                } else {
                    w.data()
                };
                let gx = need(0).then(|| gemm_nt(g, w_used, n, m, k));
                let gw = need(1).then(|| {
                    let mut gw = gemm_tn(x.data(), g, n, k, m);
                    if let Op::MaskedAffine(mask) = op {
                        for (v, mv) in gw.iter_mut().zip(mask.values()) {
                            *v *= mv;
                        }
                    }
                    gw
                });
                let gb = need(2).then(|| column_sums(g, n, m));
                vec![gx, gw, gb]
            }
            Op::BroadcastRows(n) => {
                let c = out.cols();
                vec![Some(column_sums(g, *n, c))]
            }
        }
    }

    // Convenience wrappers.

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Mul, &[a, b])
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Div, &[a, b])
    }
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::MatMul, &[a, b])
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Tanh, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Exp, &[a])
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Log, &[a])
    }
    pub fn pow(&mut self, a: Var, p: f64) -> Result<Var> {
        self.apply(Op::Pow(p), &[a])
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Relu, &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Sigmoid, &[a])
    }
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Softplus, &[a])
    }
    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Neg, &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Sum, &[a])
    }
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Op::SumAxis(axis), &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Mean, &[a])
    }
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Op::MeanAxis(axis), &[a])
    }
    pub fn variance(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Op::Variance(axis), &[a])
    }
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.apply(Op::Concat(axis), parts)
    }
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.apply(Op::Slice { axis, start, end }, &[a])
    }
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.apply(Op::Affine, &[x, w, b])
    }
    pub fn masked_affine(&mut self, x: Var, w: Var, b: Var, mask: &Mask) -> Result<Var> {
        self.apply(Op::MaskedAffine(mask.clone()), &[x, w, b])
    }
    pub fn broadcast_rows(&mut self, row: Var, n: usize) -> Result<Var> {
        self.apply(Op::BroadcastRows(n), &[row])
    }

    /// `a * c` for a constant `c`.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let s = self.scalar(c);
        self.mul(a, s)
    }

    /// `a + c` for a constant `c`.
    pub fn shift(&mut self, a: Var, c: f64) -> Result<Var> {
        let s = self.scalar(c);
        self.add(a, s)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, contrib: Vec<f64>) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contrib) {
                *e += c;
            }
        }
        None => *slot = Some(contrib),
    }
}

fn reduce_broadcast(target_len: usize, n: usize, f: &dyn Fn(usize) -> f64) -> Vec<f64> {
    if target_len == n {
        (0..n).map(f).collect()
    } else {
        vec![(0..n).map(f).sum()]
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> GraphError {
    GraphError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(GraphError::NotMatrix {
            op,
            shape: t.shape().to_vec(),
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&v| f(v)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("shape preserved")
}

fn zip_map(g: &[f64], x: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    g.iter().zip(x).map(|(&g, &x)| f(g, x)).collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn masked(w: &[f64], mask: &Mask) -> Vec<f64> {
    w.iter().zip(mask.values()).map(|(a, b)| a * b).collect()
}

fn reduce_axis(op: &'static str, x: &Tensor, axis: usize, finish: impl Fn(f64, usize) -> f64) -> Result<Tensor> {
    let (r, c) = matrix_dims(op, x)?;
    match axis {
        0 => {
            if r == 0 {
                return Err(GraphError::Empty(op));
            }
            let mut acc = vec![0.0; c];
            for row in x.data().chunks(c.max(1)) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            Tensor::matrix(1, c, acc.into_iter().map(|s| finish(s, r)).collect())
        }
        1 => {
            if c == 0 {
                return Err(GraphError::Empty(op));
            }
            let sums = x.data().chunks(c).map(|row| finish(row.iter().sum(), c)).collect();
            Tensor::matrix(r, 1, sums)
        }
        _ => Err(GraphError::InvalidAxis { op, axis }),
    }
}

fn variance_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    let means = reduce_axis("variance", x, axis, |s, n| s / n as f64)?;
    let (r, c) = (x.rows(), x.cols());
    let count = if axis == 0 { r } else { c };
    let mut acc = vec![0.0; means.numel()];
    for i in 0..r {
        for j in 0..c {
            let k = if axis == 0 { j } else { i };
            let d = x.get(i, j) - means.data()[k];
            acc[k] += d * d;
        }
    }
    let data = acc.into_iter().map(|s| s / count as f64).collect();
    Tensor::new(means.shape().to_vec(), data)
}

fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts.first().ok_or(GraphError::Empty("concat"))?;
    let (r0, c0) = matrix_dims("concat", first)?;
    match axis {
        0 => {
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                let (r, c) = matrix_dims("concat", p)?;
                if c != c0 {
                    return Err(shape_err("concat", first, p));
                }
                rows += r;
                data.extend_from_slice(p.data());
            }
            Tensor::matrix(rows, c0, data)
        }
        1 => {
            let mut cols = 0;
            for p in parts {
                let (r, c) = matrix_dims("concat", p)?;
                if r != r0 {
                    return Err(shape_err("concat", first, p));
                }
                cols += c;
            }
            let mut data = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for p in parts {
                    data.extend_from_slice(p.row_slice(i));
                }
            }
            Tensor::matrix(r0, cols, data)
        }
        _ => Err(GraphError::InvalidAxis { op: "concat", axis }),
    }
}

fn slice(x: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
    let (r, c) = matrix_dims("slice", x)?;
    let extent = match axis {
        0 => r,
        1 => c,
        _ => return Err(GraphError::InvalidAxis { op: "slice", axis }),
    };
    if start > end || end > extent {
        return Err(GraphError::SliceBounds { start, end, extent });
    }
    if axis == 0 {
        Tensor::matrix(end - start, c, x.data()[start * c..end * c].to_vec())
    } else {
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&x.row_slice(i)[start..end]);
        }
        Tensor::matrix(r, w, data)
    }
}

fn column_sums(g: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for row in g.chunks(m.max(1)).take(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

/// `A (n x k) * B (k x m)`.
pub(crate) fn gemm(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `G (n x m) * B^T` where `B` is `k x m`.
fn gemm_nt(g: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let brow = &b[p * m..(p + 1) * m];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `A^T * G` where `A` is `n x k` and `G` is `n x m`.
fn gemm_tn(a: &[f64], g: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += aip * gv;
            }
        }
    }
    out
}
