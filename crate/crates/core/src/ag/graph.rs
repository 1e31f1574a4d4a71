use std::fmt;
use std::str::FromStr;

use super::tensor::{Element, Tensor};
use super::AgError;

/// Handle to a node inside a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The differentiable op catalog.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    MatMul,
    /// Elementwise sum; the right operand may be a `1 × cols` row broadcast.
    Add,
    /// Elementwise difference with the same broadcast rule as `Add`.
    Subtract,
    Multiply,
    Relu,
    MaxOverAxis(usize),
    MeanOverAxis(usize),
    Transpose,
    ConcatRows,
    L2NormalizeRows,
    /// `x * s` where `s` is a one-element tensor.
    ScaleByScalar,
    ExpScalar,
    LogSoftmaxRows,
    /// `-Σ_i x[i, i]` of a square matrix.
    NllDiagonal,
    SumAll,
    /// Affine-free layer normalization of each row.
    LayerNormRows,
}

impl OpKind {
    pub const CATALOG: [OpKind; 18] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Subtract,
        OpKind::Multiply,
        OpKind::Relu,
        OpKind::MaxOverAxis(0),
        OpKind::MaxOverAxis(1),
        OpKind::MeanOverAxis(0),
        OpKind::MeanOverAxis(1),
        OpKind::Transpose,
        OpKind::ConcatRows,
        OpKind::L2NormalizeRows,
        OpKind::ScaleByScalar,
        OpKind::ExpScalar,
        OpKind::LogSoftmaxRows,
        OpKind::NllDiagonal,
        OpKind::SumAll,
        OpKind::LayerNormRows,
    ];

    /// Has a non-differentiable point that gradient checks must avoid.
    pub fn has_kinks(self) -> bool {
        matches!(self, OpKind::Relu | OpKind::MaxOverAxis(_))
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpKind::MatMul => f.write_str("matmul"),
            OpKind::Add => f.write_str("add"),
            OpKind::Subtract => f.write_str("subtract"),
            OpKind::Multiply => f.write_str("multiply"),
            OpKind::Relu => f.write_str("relu"),
            OpKind::MaxOverAxis(a) => write!(f, "max-over-axis:{a}"),
            OpKind::MeanOverAxis(a) => write!(f, "mean-over-axis:{a}"),
            OpKind::Transpose => f.write_str("transpose"),
            OpKind::ConcatRows => f.write_str("concat-rows"),
            OpKind::L2NormalizeRows => f.write_str("l2-normalize-rows"),
            OpKind::ScaleByScalar => f.write_str("scale-by-scalar"),
            OpKind::ExpScalar => f.write_str("exp-scalar"),
            OpKind::LogSoftmaxRows => f.write_str("log-softmax-rows"),
            OpKind::NllDiagonal => f.write_str("nll-diagonal"),
            OpKind::SumAll => f.write_str("sum-all"),
            OpKind::LayerNormRows => f.write_str("layer-norm-rows"),
        }
    }
}

impl FromStr for OpKind {
    type Err = AgError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let axis_op = |rest: &str, make: fn(usize) -> OpKind| -> Result<OpKind, AgError> {
            match rest {
                "0" => Ok(make(0)),
                "1" => Ok(make(1)),
                _ => Err(AgError::UnknownOp(s.to_string())),
            }
        };
        if let Some(rest) = s.strip_prefix("max-over-axis:") {
            return axis_op(rest, OpKind::MaxOverAxis);
        }
        if let Some(rest) = s.strip_prefix("mean-over-axis:") {
            return axis_op(rest, OpKind::MeanOverAxis);
        }
        Ok(match s {
            "matmul" => OpKind::MatMul,
            "add" => OpKind::Add,
            "subtract" => OpKind::Subtract,
            "multiply" => OpKind::Multiply,
            "relu" => OpKind::Relu,
            "transpose" => OpKind::Transpose,
            "concat-rows" => OpKind::ConcatRows,
            "l2-normalize-rows" => OpKind::L2NormalizeRows,
            "scale-by-scalar" => OpKind::ScaleByScalar,
            "exp-scalar" => OpKind::ExpScalar,
            "log-softmax-rows" => OpKind::LogSoftmaxRows,
            "nll-diagonal" => OpKind::NllDiagonal,
            "sum-all" => OpKind::SumAll,
            "layer-norm-rows" => OpKind::LayerNormRows,
            _ => return Err(AgError::UnknownOp(s.to_string())),
        })
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;
const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Saved<T> {
    None,
    /// argmax positions for max-over-axis
    Indices(Vec<usize>),
    /// per-row norm (l2) or inverse std (layer norm)
    RowScale(Vec<T>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    kind: Option<OpKind>,
    inputs: Vec<Var>,
    value: Tensor<T>,
    requires_grad: bool,
    needs_grad: bool,
    saved: Saved<T>,
}

/// A dynamically built computation graph (tape).
///
/// Nodes are appended in execution order, so the node list is always a valid
/// topological order. Leaf gradients persist across [`Graph::backward`] calls
/// and accumulate until [`Graph::zero_grad`].
#[derive(Debug, Clone)]
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    fault: Option<(OpKind, f64)>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn rank2<T: Element>(op: OpKind, t: &Tensor<T>) -> Result<(usize, usize), AgError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        _ => Err(AgError::ShapeMismatch { op: op.to_string(), shapes: vec![t.shape().to_vec()] }),
    }
}

/// Row-wise view: rank-1 tensors are a single row.
fn rows_cols<T: Element>(op: OpKind, t: &Tensor<T>) -> Result<(usize, usize), AgError> {
    match t.shape() {
        [c] => Ok((1, *c)),
        [r, c] => Ok((*r, *c)),
        _ => Err(AgError::ShapeMismatch { op: op.to_string(), shapes: vec![t.shape().to_vec()] }),
    }
}

/// Strictly larger, with the first NaN winning over any number.
fn beats<T: Element>(candidate: T, best: T) -> bool {
    candidate > best || (candidate.is_nan() && !best.is_nan())
}

fn is_row_broadcast(a: &[usize], b: &[usize]) -> bool {
    matches!((a, b), ([_, c], [1, d]) if c == d)
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), fault: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf. `requires_grad` leaves receive gradients in `backward`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            kind: None,
            inputs: Vec::new(),
            value,
            requires_grad,
            needs_grad: requires_grad,
            saved: Saved::None,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(T::from_f64(value)))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a `requires_grad` leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Scales the input adjoints of every `kind` node by `factor`.
    /// Only meant for exercising gradient checkers.
    #[doc(hidden)]
    pub fn inject_gradient_fault(&mut self, kind: OpKind, factor: f64) {
        self.fault = Some((kind, factor));
    }

    /// Activation pattern of every kinked op (relu masks, argmax positions).
    /// Two evaluations with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> Vec<usize> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match node.kind {
                Some(OpKind::Relu) => {
                    let x = &self.nodes[node.inputs[0].0].value;
                    sig.extend(x.data().iter().map(|v| usize::from(*v > T::zero())));
                }
                Some(OpKind::MaxOverAxis(_)) => {
                    if let Saved::Indices(idx) = &node.saved {
                        sig.extend_from_slice(idx);
                    }
                }
                _ => {}
            }
        }
        sig
    }

    fn check_var(&self, v: Var) -> Result<(), AgError> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(AgError::UnknownVar(v.0))
        }
    }

    /// Evaluates `kind` on `inputs` and appends the result node.
    pub fn forward(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var, AgError> {
        for &v in inputs {
            self.check_var(v)?;
        }
        let arity_ok = match kind {
            OpKind::ConcatRows => !inputs.is_empty(),
            OpKind::MatMul | OpKind::Add | OpKind::Subtract | OpKind::Multiply | OpKind::ScaleByScalar => {
                inputs.len() == 2
            }
            _ => inputs.len() == 1,
        };
        if !arity_ok {
            return Err(AgError::Arity { op: kind.to_string(), got: inputs.len() });
        }
        let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let mismatch = || AgError::ShapeMismatch {
            op: kind.to_string(),
            shapes: vals.iter().map(|t| t.shape().to_vec()).collect(),
        };
        let mut saved = Saved::None;

        let value = match kind {
            OpKind::MatMul => {
                let (m, k) = rank2(kind, vals[0])?;
                let (k2, n) = rank2(kind, vals[1])?;
                if k != k2 {
                    return Err(mismatch());
                }
                let mut out = vec![T::zero(); m * n];
                T::gemm(m, k, n, vals[0].data(), k as isize, 1, vals[1].data(), n as isize, 1, T::zero(), &mut out);
                Tensor::from_parts(vec![m, n], out)
            }
            OpKind::Add | OpKind::Subtract => {
                let (a, b) = (vals[0], vals[1]);
                let sign = if kind == OpKind::Add { T::one() } else { -T::one() };
                if a.shape() == b.shape() {
                    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x + sign * *y).collect();
                    Tensor::from_parts(a.shape().to_vec(), data)
                } else if is_row_broadcast(a.shape(), b.shape()) {
                    let mut data = Vec::with_capacity(a.len());
                    for row in a.data().chunks_exact(a.cols()) {
                        data.extend(row.iter().zip(b.data()).map(|(x, y)| *x + sign * *y));
                    }
                    Tensor::from_parts(a.shape().to_vec(), data)
                } else {
                    return Err(mismatch());
                }
            }
            OpKind::Multiply => {
                if vals[0].shape() != vals[1].shape() {
                    return Err(mismatch());
                }
                let data = vals[0].data().iter().zip(vals[1].data()).map(|(x, y)| *x * *y).collect();
                Tensor::from_parts(vals[0].shape().to_vec(), data)
            }
            OpKind::Relu => {
                // NaN passes through so non-finite activations stay visible.
                let data =
                    vals[0].data().iter().map(|x| if *x > T::zero() || x.is_nan() { *x } else { T::zero() }).collect();
                Tensor::from_parts(vals[0].shape().to_vec(), data)
            }
            OpKind::MaxOverAxis(axis) => {
                let (r, c) = rank2(kind, vals[0])?;
                let x = vals[0].data();
                let (out_shape, idx) = match axis {
                    0 => {
                        let mut idx = vec![0usize; c];
                        for i in 1..r {
                            let row = &x[i * c..(i + 1) * c];
                            for j in 0..c {
                                if beats(row[j], x[idx[j] * c + j]) {
                                    idx[j] = i;
                                }
                            }
                        }
                        (vec![1, c], idx)
                    }
                    1 => {
                        let idx = (0..r)
                            .map(|i| {
                                let row = &x[i * c..(i + 1) * c];
                                (1..c).fold(0, |best, j| if beats(row[j], row[best]) { j } else { best })
                            })
                            .collect();
                        (vec![r, 1], idx)
                    }
                    _ => return Err(mismatch()),
                };
                let data = match axis {
                    0 => idx.iter().enumerate().map(|(j, &i)| x[i * c + j]).collect(),
                    _ => idx.iter().enumerate().map(|(i, &j)| x[i * c + j]).collect(),
                };
                saved = Saved::Indices(idx);
                Tensor::from_parts(out_shape, data)
            }
            OpKind::MeanOverAxis(axis) => {
                let (r, c) = rank2(kind, vals[0])?;
                let x = vals[0].data();
                match axis {
                    0 => {
                        let data = (0..c)
                            .map(|j| T::from_f64((0..r).map(|i| x[i * c + j].as_f64()).sum::<f64>() / r as f64))
                            .collect();
                        Tensor::from_parts(vec![1, c], data)
                    }
                    1 => {
                        let data = (0..r)
                            .map(|i| {
                                T::from_f64(x[i * c..(i + 1) * c].iter().map(|v| v.as_f64()).sum::<f64>() / c as f64)
                            })
                            .collect();
                        Tensor::from_parts(vec![r, 1], data)
                    }
                    _ => return Err(mismatch()),
                }
            }
            OpKind::Transpose => {
                let (r, c) = rank2(kind, vals[0])?;
                Tensor::from_parts(vec![c, r], transpose(vals[0].data(), r, c))
            }
            OpKind::ConcatRows => {
                let c = rank2(kind, vals[0])?.1;
                let mut rows = 0;
                for v in &vals {
                    let (r, c2) = rank2(kind, v)?;
                    if c2 != c {
                        return Err(mismatch());
                    }
                    rows += r;
                }
                let mut data = Vec::with_capacity(rows * c);
                for v in &vals {
                    data.extend_from_slice(v.data());
                }
                Tensor::from_parts(vec![rows, c], data)
            }
            OpKind::L2NormalizeRows => {
                let (r, c) = rows_cols(kind, vals[0])?;
                let x = vals[0].data();
                let mut norms = Vec::with_capacity(r);
                let mut data = Vec::with_capacity(r * c);
                for i in 0..r {
                    let row = &x[i * c..(i + 1) * c];
                    let n = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt().max(NORM_FLOOR);
                    data.extend(row.iter().map(|v| T::from_f64(v.as_f64() / n)));
                    norms.push(T::from_f64(n));
                }
                saved = Saved::RowScale(norms);
                Tensor::from_parts(vals[0].shape().to_vec(), data)
            }
            OpKind::ScaleByScalar => {
                let s = vals[1].item().ok_or_else(mismatch)?;
                let data = vals[0].data().iter().map(|x| *x * s).collect();
                Tensor::from_parts(vals[0].shape().to_vec(), data)
            }
            OpKind::ExpScalar => {
                let s = vals[0].item().ok_or_else(mismatch)?;
                Tensor::from_parts(vals[0].shape().to_vec(), vec![s.exp()])
            }
            OpKind::LogSoftmaxRows => {
                let (r, c) = rows_cols(kind, vals[0])?;
                let x = vals[0].data();
                let mut data = Vec::with_capacity(r * c);
                for i in 0..r {
                    let row = &x[i * c..(i + 1) * c];
                    let m = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
                    let lse = m + row.iter().map(|v| (v.as_f64() - m).exp()).sum::<f64>().ln();
                    data.extend(row.iter().map(|v| T::from_f64(v.as_f64() - lse)));
                }
                Tensor::from_parts(vals[0].shape().to_vec(), data)
            }
            OpKind::NllDiagonal => {
                let (r, c) = rank2(kind, vals[0])?;
                if r != c {
                    return Err(mismatch());
                }
                let s: f64 = (0..r).map(|i| vals[0].data()[i * c + i].as_f64()).sum();
                Tensor::scalar(T::from_f64(-s))
            }
            OpKind::SumAll => Tensor::scalar(T::from_f64(vals[0].data().iter().map(|v| v.as_f64()).sum())),
            OpKind::LayerNormRows => {
                let (r, c) = rows_cols(kind, vals[0])?;
                let x = vals[0].data();
                let mut inv = Vec::with_capacity(r);
                let mut data = Vec::with_capacity(r * c);
                for i in 0..r {
                    let row = &x[i * c..(i + 1) * c];
                    let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / c as f64;
                    let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / c as f64;
                    let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    data.extend(row.iter().map(|v| T::from_f64((v.as_f64() - mean) * is)));
                    inv.push(T::from_f64(is));
                }
                saved = Saved::RowScale(inv);
                Tensor::from_parts(vals[0].shape().to_vec(), data)
            }
        };

        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            kind: Some(kind),
            inputs: inputs.to_vec(),
            value,
            requires_grad: false,
            needs_grad,
            saved,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AgError> {
        self.forward(OpKind::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AgError> {
        self.forward(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AgError> {
        self.forward(OpKind::Subtract, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AgError> {
        self.forward(OpKind::Multiply, &[a, b])
    }
    pub fn relu(&mut self, a: Var) -> Result<Var, AgError> {
        self.forward(OpKind::Relu, &[a])
    }
    pub fn max_over_axis(&mut self, a: Var, axis: usize) -> Result<Var, AgError> {
        self.forward(OpKind::MaxOverAxis(axis), &[a])
    }
    pub fn mean_over_axis(&mut self, a: Var, axis: usize) -> Result<Var, AgError> {
        self.forward(OpKind::MeanOverAxis(axis), &[a])
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var, AgError> {
        self.forward(OpKind::Transpose, &[a])
    }
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AgError> {
        self.forward(OpKind::ConcatRows, parts)
    }
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var, AgError> {
        self.forward(OpKind::L2NormalizeRows, &[a])
    }
    pub fn scale(&mut self, a: Var, s: Var) -> Result<Var, AgError> {
        self.forward(OpKind::ScaleByScalar, &[a, s])
    }
    /// Scales by a fixed constant.
    pub fn scale_const(&mut self, a: Var, s: f64) -> Result<Var, AgError> {
        let s = self.scalar_constant(s);
        self.scale(a, s)
    }
    pub fn exp_scalar(&mut self, a: Var) -> Result<Var, AgError> {
        self.forward(OpKind::ExpScalar, &[a])
    }
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var, AgError> {
        self.forward(OpKind::LogSoftmaxRows, &[a])
    }
    pub fn nll_diagonal(&mut self, a: Var) -> Result<Var, AgError> {
        self.forward(OpKind::NllDiagonal, &[a])
    }
    pub fn sum_all(&mut self, a: Var) -> Result<Var, AgError> {
        self.forward(OpKind::SumAll, &[a])
    }
    pub fn layer_norm_rows(&mut self, a: Var) -> Result<Var, AgError> {
        self.forward(OpKind::LayerNormRows, &[a])
    }

    /// Reverse-mode sweep from a scalar `loss`, accumulating into leaf grads.
    pub fn backward(&mut self, loss: Var) -> Result<(), AgError> {
        self.check_var(loss)?;
        let shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(AgError::NonScalarLoss(shape));
        }
        let mut adj: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::full(&shape, T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(kind) = node.kind else {
                if node.requires_grad {
                    match &mut self.grads[i] {
                        Some(acc) => acc.add_assign(&g),
                        slot => *slot = Some(g),
                    }
                }
                continue;
            };
            let mut input_grads = self.input_grads(i, kind, g);
            if let Some((fault_kind, factor)) = self.fault {
                if fault_kind == kind {
                    let f = T::from_f64(factor);
                    for t in input_grads.iter_mut().flatten() {
                        t.data_mut().iter_mut().for_each(|v| *v = *v * f);
                    }
                }
            }
            for (inp, ig) in self.nodes[i].inputs.clone().into_iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                match &mut adj[inp.0] {
                    Some(acc) => acc.add_assign(&ig),
                    slot => *slot = Some(ig),
                }
            }
        }
        Ok(())
    }

    /// Adjoints of node `i`'s inputs given its output adjoint `g`.
    fn input_grads(&self, i: usize, kind: OpKind, mut g: Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let node = &self.nodes[i];
        let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].needs_grad).collect();
        let x = |k: usize| &self.nodes[node.inputs[k].0].value;

        // Elementwise adjoints reuse the incoming buffer.
        match kind {
            OpKind::Add | OpKind::Subtract => {
                let sign = if kind == OpKind::Add { T::one() } else { -T::one() };
                let (a, b) = (x(0), x(1));
                let gb = needs[1].then(|| {
                    if a.shape() == b.shape() {
                        Tensor::from_parts(b.shape().to_vec(), g.data().iter().map(|v| sign * *v).collect())
                    } else {
                        let mut acc = vec![0.0f64; b.cols()];
                        for row in g.data().chunks_exact(b.cols()) {
                            acc.iter_mut().zip(row).for_each(|(s, v)| *s += v.as_f64());
                        }
                        Tensor::from_parts(b.shape().to_vec(), acc.into_iter().map(|v| sign * T::from_f64(v)).collect())
                    }
                });
                return vec![needs[0].then_some(g), gb];
            }
            OpKind::Relu => {
                let a = x(0);
                g.data_mut().iter_mut().zip(a.data()).for_each(|(g, v)| {
                    if !(*v > T::zero()) {
                        *g = T::zero();
                    }
                });
                return vec![Some(g)];
            }
            _ => {}
        }
        let g = &g;
        let y = &node.value;
        let gd = g.data();
        let like = |t: &Tensor<T>, data: Vec<T>| Tensor::from_parts(t.shape().to_vec(), data);

        match kind {
            OpKind::Add | OpKind::Subtract | OpKind::Relu => unreachable!("handled above"),
            OpKind::MatMul => {
                let (a, b) = (x(0), x(1));
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                let ga = needs[0].then(|| {
                    let mut out = vec![T::zero(); m * k];
                    T::gemm(m, n, k, gd, n as isize, 1, b.data(), 1, n as isize, T::zero(), &mut out);
                    Tensor::from_parts(vec![m, k], out)
                });
                let gb = needs[1].then(|| {
                    let mut out = vec![T::zero(); k * n];
                    T::gemm(k, m, n, a.data(), 1, k as isize, gd, n as isize, 1, T::zero(), &mut out);
                    Tensor::from_parts(vec![k, n], out)
                });
                vec![ga, gb]
            }
            OpKind::Multiply => {
                let (a, b) = (x(0), x(1));
                let ga = needs[0].then(|| like(a, gd.iter().zip(b.data()).map(|(g, v)| *g * *v).collect()));
                let gb = needs[1].then(|| like(b, gd.iter().zip(a.data()).map(|(g, v)| *g * *v).collect()));
                vec![ga, gb]
            }
            OpKind::MaxOverAxis(axis) => {
                let a = x(0);
                let c = a.cols();
                let Saved::Indices(idx) = &node.saved else { unreachable!("max node without indices") };
                let mut out = vec![T::zero(); a.len()];
                for (o, &sel) in idx.iter().enumerate() {
                    let pos = if axis == 0 { sel * c + o } else { o * c + sel };
                    out[pos] = gd[o];
                }
                vec![Some(like(a, out))]
            }
            OpKind::MeanOverAxis(axis) => {
                let a = x(0);
                let (r, c) = (a.shape()[0], a.shape()[1]);
                let out = if axis == 0 {
                    let inv = T::from_f64(1.0 / r as f64);
                    (0..r * c).map(|p| gd[p % c] * inv).collect()
                } else {
                    let inv = T::from_f64(1.0 / c as f64);
                    (0..r * c).map(|p| gd[p / c] * inv).collect()
                };
                vec![Some(like(a, out))]
            }
            OpKind::Transpose => {
                let (r, c) = (y.shape()[0], y.shape()[1]);
                vec![Some(Tensor::from_parts(vec![c, r], transpose(gd, r, c)))]
            }
            OpKind::ConcatRows => {
                let c = y.cols();
                let mut offset = 0;
                node.inputs
                    .iter()
                    .zip(&needs)
                    .map(|(v, &need)| {
                        let part = &self.nodes[v.0].value;
                        let n = part.shape()[0] * c;
                        let out = need.then(|| like(part, gd[offset..offset + n].to_vec()));
                        offset += n;
                        out
                    })
                    .collect()
            }
            OpKind::L2NormalizeRows => {
                let Saved::RowScale(norms) = &node.saved else { unreachable!("l2 node without norms") };
                let c = y.cols();
                let mut out = Vec::with_capacity(y.len());
                for (r, n) in norms.iter().enumerate() {
                    let yr = &y.data()[r * c..(r + 1) * c];
                    let gr = &gd[r * c..(r + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                    let n = n.as_f64();
                    out.extend(yr.iter().zip(gr).map(|(yv, gv)| T::from_f64((gv.as_f64() - yv.as_f64() * dot) / n)));
                }
                vec![Some(like(x(0), out))]
            }
            OpKind::ScaleByScalar => {
                let (a, s) = (x(0), x(1));
                let sv = s.data()[0];
                let ga = needs[0].then(|| like(a, gd.iter().map(|v| *v * sv).collect()));
                let gs = needs[1].then(|| {
                    let acc: f64 = gd.iter().zip(a.data()).map(|(g, v)| g.as_f64() * v.as_f64()).sum();
                    like(s, vec![T::from_f64(acc)])
                });
                vec![ga, gs]
            }
            OpKind::ExpScalar => vec![Some(like(x(0), vec![gd[0] * y.data()[0]]))],
            OpKind::LogSoftmaxRows => {
                let c = y.cols();
                let r = y.len() / c;
                let mut out = Vec::with_capacity(y.len());
                for i in 0..r {
                    let yr = &y.data()[i * c..(i + 1) * c];
                    let gr = &gd[i * c..(i + 1) * c];
                    let gsum: f64 = gr.iter().map(|v| v.as_f64()).sum();
                    out.extend(yr.iter().zip(gr).map(|(yv, gv)| T::from_f64(gv.as_f64() - yv.as_f64().exp() * gsum)));
                }
                vec![Some(like(x(0), out))]
            }
            OpKind::NllDiagonal => {
                let a = x(0);
                let c = a.shape()[1];
                let mut out = vec![T::zero(); a.len()];
                for i in 0..c {
                    out[i * c + i] = -gd[0];
                }
                vec![Some(like(a, out))]
            }
            OpKind::SumAll => {
                let a = x(0);
                vec![Some(Tensor::full(a.shape(), gd[0]))]
            }
            OpKind::LayerNormRows => {
                let Saved::RowScale(inv) = &node.saved else { unreachable!("layer norm node without scale") };
                let c = y.cols();
                let mut out = Vec::with_capacity(y.len());
                for (i, is) in inv.iter().enumerate() {
                    let yr = &y.data()[i * c..(i + 1) * c];
                    let gr = &gd[i * c..(i + 1) * c];
                    let gmean = gr.iter().map(|v| v.as_f64()).sum::<f64>() / c as f64;
                    let gymean = gr.iter().zip(yr).map(|(g, y)| g.as_f64() * y.as_f64()).sum::<f64>() / c as f64;
                    let is = is.as_f64();
                    out.extend(
                        yr.iter()
                            .zip(gr)
                            .map(|(yv, gv)| T::from_f64(is * (gv.as_f64() - gmean - yv.as_f64() * gymean))),
                    );
                }
                vec![Some(like(x(0), out))]
            }
        }
    }
}

fn transpose<T: Copy>(data: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(r * c);
    for j in 0..c {
        out.extend((0..r).map(|i| data[i * c + j]));
    }
    out
}
