use std::cell::RefCell;

use super::{axis_extents, Result, Tensor, TensorError};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Log(usize),
    Sigmoid(usize),
    MatMul(usize, usize),
    TransposeLast2(usize),
    Reshape(usize),
    BroadcastTo(usize),
    Softmax(usize, usize),
    LogSoftmax(usize, usize),
    LayerNorm {
        x: usize,
        axis: usize,
        inv_std: Vec<f64>,
    },
    L2Normalize {
        x: usize,
        axis: usize,
        eps: f64,
    },
    Sum(usize),
    Mean(usize),
    SumAxis(usize, usize),
    MeanAxis(usize, usize),
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    Slice {
        x: usize,
        axis: usize,
        start: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Recording of a computation graph. Single-threaded by construction.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a leaf whose gradient is tracked.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, Op::Leaf, true)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded node. Requires exclusive access, so no [`Var`]
    /// can outlive the reset.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
    }

    /// Accumulated gradient of a tracked leaf, if `backward` has reached it.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let node = &nodes[var.id];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    /// Propagates d`loss`/d(leaf) into every tracked leaf that `loss`
    /// depends on, adding to whatever gradient the leaf already holds.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        self.check_same(loss);
        let mut leaf_grads: Vec<(usize, Vec<f64>)> = Vec::new();
        {
            let nodes = self.nodes.borrow();
            let root = &nodes[loss.id];
            if root.value.len() != 1 {
                return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
            }
            let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
            grads[loss.id] = Some(vec![1.0]);
            for id in (0..=loss.id).rev() {
                let Some(g) = grads[id].take() else { continue };
                let node = &nodes[id];
                if !node.requires_grad {
                    continue;
                }
                if let Op::Leaf = node.op {
                    leaf_grads.push((id, g));
                    continue;
                }
                propagate(&nodes, node, &g, &mut grads);
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            match &mut nodes[id].grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn push_node(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn check_same(&self, var: Var<'_>) {
        assert!(
            std::ptr::eq(self, var.tape),
            "variable belongs to a different tape"
        );
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn record(&self, value: Tensor, op: Op, parents: &[usize]) -> Var<'_> {
        let rg = self.requires(parents);
        self.push_node(value, op, rg)
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |i: usize| &nodes[i].value;
    let wants = |i: usize| nodes[i].requires_grad;
    let y = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if wants(*a) {
                accumulate(&mut grads[*a], g.to_vec());
            }
            if wants(*b) {
                accumulate(&mut grads[*b], g.to_vec());
            }
        }
        Op::Sub(a, b) => {
            if wants(*a) {
                accumulate(&mut grads[*a], g.to_vec());
            }
            if wants(*b) {
                accumulate(&mut grads[*b], g.iter().map(|v| -v).collect());
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            if wants(*a) {
                accumulate(&mut grads[*a], g.iter().zip(bv).map(|(g, b)| g * b).collect());
            }
            if wants(*b) {
                accumulate(&mut grads[*b], g.iter().zip(av).map(|(g, a)| g * a).collect());
            }
        }
        Op::Scale(a, c) => accumulate(&mut grads[*a], g.iter().map(|v| v * c).collect()),
        Op::AddScalar(a) | Op::Reshape(a) => accumulate(&mut grads[*a], g.to_vec()),
        Op::Exp(a) => accumulate(&mut grads[*a], g.iter().zip(y).map(|(g, y)| g * y).collect()),
        Op::Log(a) => {
            let x = val(*a).data();
            accumulate(&mut grads[*a], g.iter().zip(x).map(|(g, x)| g / x).collect());
        }
        Op::Sigmoid(a) => accumulate(
            &mut grads[*a],
            g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
        ),
        Op::MatMul(a, b) => {
            let (at, bt) = (val(*a), val(*b));
            let (m, k, n) = (at.shape()[0], at.shape()[1], bt.shape()[1]);
            if wants(*a) {
                // dA = G · Bᵀ
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * bt.data()[p * n + j];
                        }
                        ga[i * k + p] = s;
                    }
                }
                accumulate(&mut grads[*a], ga);
            }
            if wants(*b) {
                // dB = Aᵀ · G
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = at.data()[i * k + p];
                        for j in 0..n {
                            gb[p * n + j] += aip * g[i * n + j];
                        }
                    }
                }
                accumulate(&mut grads[*b], gb);
            }
        }
        Op::TransposeLast2(a) => {
            accumulate(&mut grads[*a], transpose_last2_data(node.value.shape(), g));
        }
        Op::BroadcastTo(a) => {
            let src = val(*a).shape();
            let mut ga = vec![0.0; val(*a).len()];
            let map = broadcast_index_map(src, node.value.shape());
            for (out, &si) in map.iter().enumerate() {
                ga[si] += g[out];
            }
            accumulate(&mut grads[*a], ga);
        }
        Op::Softmax(a, axis) => {
            let (outer, dim, inner) = axis_extents(node.value.shape(), *axis);
            let mut ga = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |d: usize| (o * dim + d) * inner + i;
                    let dot: f64 = (0..dim).map(|d| g[at(d)] * y[at(d)]).sum();
                    for d in 0..dim {
                        ga[at(d)] = y[at(d)] * (g[at(d)] - dot);
                    }
                }
            }
            accumulate(&mut grads[*a], ga);
        }
        Op::LogSoftmax(a, axis) => {
            let (outer, dim, inner) = axis_extents(node.value.shape(), *axis);
            let mut ga = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |d: usize| (o * dim + d) * inner + i;
                    let gsum: f64 = (0..dim).map(|d| g[at(d)]).sum();
                    for d in 0..dim {
                        ga[at(d)] = g[at(d)] - y[at(d)].exp() * gsum;
                    }
                }
            }
            accumulate(&mut grads[*a], ga);
        }
        Op::LayerNorm { x, axis, inv_std } => {
            // y is the normalized value itself
            let (outer, dim, inner) = axis_extents(node.value.shape(), *axis);
            let mut ga = vec![0.0; y.len()];
            let n = dim as f64;
            for o in 0..outer {
                for i in 0..inner {
                    let at = |d: usize| (o * dim + d) * inner + i;
                    let inv = inv_std[o * inner + i];
                    let gsum: f64 = (0..dim).map(|d| g[at(d)]).sum();
                    let gy: f64 = (0..dim).map(|d| g[at(d)] * y[at(d)]).sum();
                    for d in 0..dim {
                        ga[at(d)] = inv / n * (n * g[at(d)] - gsum - y[at(d)] * gy);
                    }
                }
            }
            accumulate(&mut grads[*x], ga);
        }
        Op::L2Normalize { x, axis, eps } => {
            let xv = val(*x).data();
            let (outer, dim, inner) = axis_extents(node.value.shape(), *axis);
            let mut ga = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |d: usize| (o * dim + d) * inner + i;
                    let norm = (0..dim).map(|d| xv[at(d)] * xv[at(d)]).sum::<f64>().sqrt();
                    let denom = norm + eps;
                    let gx: f64 = (0..dim).map(|d| g[at(d)] * xv[at(d)]).sum();
                    let coupling = if norm > 0.0 {
                        gx / (norm * denom * denom)
                    } else {
                        0.0
                    };
                    for d in 0..dim {
                        ga[at(d)] = g[at(d)] / denom - xv[at(d)] * coupling;
                    }
                }
            }
            accumulate(&mut grads[*x], ga);
        }
        Op::Sum(a) => accumulate(&mut grads[*a], vec![g[0]; val(*a).len()]),
        Op::Mean(a) => {
            let n = val(*a).len();
            accumulate(&mut grads[*a], vec![g[0] / n as f64; n]);
        }
        Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
            let (outer, dim, inner) = axis_extents(val(*a).shape(), *axis);
            let scale = if matches!(node.op, Op::MeanAxis(..)) {
                1.0 / dim as f64
            } else {
                1.0
            };
            let mut ga = vec![0.0; outer * dim * inner];
            for o in 0..outer {
                for d in 0..dim {
                    for i in 0..inner {
                        ga[(o * dim + d) * inner + i] = g[o * inner + i] * scale;
                    }
                }
            }
            accumulate(&mut grads[*a], ga);
        }
        Op::Concat { parts, axis } => {
            let (outer, total, inner) = axis_extents(node.value.shape(), *axis);
            let mut offset = 0;
            for &p in parts {
                let dim = val(p).shape()[*axis];
                if wants(p) {
                    let mut gp = Vec::with_capacity(outer * dim * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        gp.extend_from_slice(&g[start..start + dim * inner]);
                    }
                    accumulate(&mut grads[p], gp);
                }
                offset += dim;
            }
        }
        Op::Slice { x, axis, start } => {
            let (outer, total, inner) = axis_extents(val(*x).shape(), *axis);
            let len = node.value.shape()[*axis];
            let mut ga = vec![0.0; outer * total * inner];
            for o in 0..outer {
                let dst = (o * total + start) * inner;
                let src = o * len * inner;
                ga[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            accumulate(&mut grads[*x], ga);
        }
    }
}

fn transpose_last2_data(shape: &[usize], data: &[f64]) -> Vec<f64> {
    let r = shape.len();
    let (rows, cols) = (shape[r - 2], shape[r - 1]);
    let batch = data.len() / (rows * cols);
    let mut out = vec![0.0; data.len()];
    for b in 0..batch {
        let base = b * rows * cols;
        for i in 0..rows {
            for j in 0..cols {
                out[base + j * rows + i] = data[base + i * cols + j];
            }
        }
    }
    out
}

/// For every flat index of `target`, the flat index of the source element it
/// is broadcast from.
fn broadcast_index_map(src: &[usize], target: &[usize]) -> Vec<usize> {
    let total: usize = target.iter().product();
    let mut src_strides = vec![0usize; src.len()];
    let mut acc = 1;
    for ax in (0..src.len()).rev() {
        src_strides[ax] = if src[ax] == 1 { 0 } else { acc };
        acc *= src[ax];
    }
    let mut out = Vec::with_capacity(total);
    let mut index = vec![0usize; target.len()];
    for _ in 0..total {
        out.push(index.iter().zip(&src_strides).map(|(i, s)| i * s).sum());
        for ax in (0..target.len()).rev() {
            index[ax] += 1;
            if index[ax] < target[ax] {
                break;
            }
            index[ax] = 0;
        }
    }
    out
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::Axis {
            op,
            axis,
            shape: shape.to_vec(),
        });
    }
    Ok(())
}

// fallible ops cannot implement std::ops
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.with_value(self.id, Tensor::clone)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |t| t.shape().to_vec())
    }

    /// Scalar value; panics on a non-scalar node.
    pub fn item(&self) -> f64 {
        self.tape
            .with_value(self.id, |t| t.item().expect("item() on a non-scalar"))
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(&[self.id])
    }

    pub fn backward(self) -> Result<()> {
        self.tape.backward(self)
    }

    pub fn grad(self) -> Option<Tensor> {
        self.tape.grad(self)
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let out = self.tape.with_value(self.id, |t| {
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
                .expect("unary keeps shape")
        });
        self.tape.record(out, op, &[self.id])
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.tape.check_same(other);
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.shape() != b.shape() {
                return Err(TensorError::Dimension {
                    op: name,
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        Ok(self.tape.record(out, op, &[self.id, other.id]))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |v| v * c)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |v| v + c)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    /// `1 - self`
    pub fn one_minus(self) -> Var<'t> {
        self.neg().add_scalar(1.0)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check_same(other);
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(TensorError::Dimension {
                    op: "matmul",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let (ad, bd) = (a.data(), b.data());
            let mut c = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let aip = ad[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let row = &bd[p * n..(p + 1) * n];
                    for (cj, bj) in c[i * n..(i + 1) * n].iter_mut().zip(row) {
                        *cj += aip * bj;
                    }
                }
            }
            Tensor::new(vec![m, n], c)?
        };
        Ok(self.tape.record(out, Op::MatMul(self.id, other.id), &[self.id, other.id]))
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(self) -> Result<Var<'t>> {
        let out = self.tape.with_value(self.id, |t| {
            if t.rank() < 2 {
                return Err(TensorError::Rank {
                    op: "transpose_last2",
                    expected: ">= 2",
                    shape: t.shape().to_vec(),
                });
            }
            let mut shape = t.shape().to_vec();
            let r = shape.len();
            shape.swap(r - 2, r - 1);
            Tensor::new(shape, transpose_last2_data(t.shape(), t.data()))
        })?;
        Ok(self.tape.record(out, Op::TransposeLast2(self.id), &[self.id]))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let out = self.tape.with_value(self.id, |t| t.reshape(shape))?;
        Ok(self.tape.record(out, Op::Reshape(self.id), &[self.id]))
    }

    /// Broadcasts size-1 axes up to `shape`; ranks must match.
    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'t>> {
        let out = self.tape.with_value(self.id, |t| {
            let ok = t.rank() == shape.len()
                && t.shape().iter().zip(shape).all(|(&s, &d)| s == d || s == 1);
            if !ok {
                return Err(TensorError::Dimension {
                    op: "broadcast_to",
                    lhs: t.shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
            let map = broadcast_index_map(t.shape(), shape);
            Tensor::new(shape.to_vec(), map.iter().map(|&i| t.data()[i]).collect())
        })?;
        Ok(self.tape.record(out, Op::BroadcastTo(self.id), &[self.id]))
    }

    /// Numerically stable softmax along `axis` (max-subtracted).
    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let out = self.tape.with_value(self.id, |t| {
            check_axis("softmax", t.shape(), axis)?;
            let (outer, dim, inner) = axis_extents(t.shape(), axis);
            let x = t.data();
            let mut y = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |d: usize| (o * dim + d) * inner + i;
                    let max = (0..dim).map(|d| x[at(d)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for d in 0..dim {
                        let e = (x[at(d)] - max).exp();
                        y[at(d)] = e;
                        total += e;
                    }
                    for d in 0..dim {
                        y[at(d)] /= total;
                    }
                }
            }
            Tensor::new(t.shape().to_vec(), y)
        })?;
        Ok(self.tape.record(out, Op::Softmax(self.id, axis), &[self.id]))
    }

    pub fn log_softmax(self, axis: usize) -> Result<Var<'t>> {
        let out = self.tape.with_value(self.id, |t| {
            check_axis("log_softmax", t.shape(), axis)?;
            let (outer, dim, inner) = axis_extents(t.shape(), axis);
            let x = t.data();
            let mut y = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |d: usize| (o * dim + d) * inner + i;
                    let max = (0..dim).map(|d| x[at(d)]).fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + (0..dim).map(|d| (x[at(d)] - max).exp()).sum::<f64>().ln();
                    for d in 0..dim {
                        y[at(d)] = x[at(d)] - lse;
                    }
                }
            }
            Tensor::new(t.shape().to_vec(), y)
        })?;
        Ok(self.tape.record(out, Op::LogSoftmax(self.id, axis), &[self.id]))
    }

    /// Zero-mean, unit-variance normalization along `axis` (biased variance,
    /// `eps` added before the square root). No affine parameters.
    pub fn layer_norm(self, axis: usize, eps: f64) -> Result<Var<'t>> {
        let (out, inv_std) = self.tape.with_value(self.id, |t| {
            check_axis("layer_norm", t.shape(), axis)?;
            let (outer, dim, inner) = axis_extents(t.shape(), axis);
            let x = t.data();
            let mut y = vec![0.0; x.len()];
            let mut inv_std = vec![0.0; outer * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |d: usize| (o * dim + d) * inner + i;
                    let mean = (0..dim).map(|d| x[at(d)]).sum::<f64>() / dim as f64;
                    let var =
                        (0..dim).map(|d| (x[at(d)] - mean).powi(2)).sum::<f64>() / dim as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    inv_std[o * inner + i] = inv;
                    for d in 0..dim {
                        y[at(d)] = (x[at(d)] - mean) * inv;
                    }
                }
            }
            Ok::<_, TensorError>((Tensor::new(t.shape().to_vec(), y)?, inv_std))
        })?;
        Ok(self.tape.record(
            out,
            Op::LayerNorm {
                x: self.id,
                axis,
                inv_std,
            },
            &[self.id],
        ))
    }

    /// `x / (‖x‖ + eps)` along `axis`; a zero slice maps to zero.
    pub fn l2_normalize(self, axis: usize, eps: f64) -> Result<Var<'t>> {
        let out = self.tape.with_value(self.id, |t| {
            check_axis("l2_normalize", t.shape(), axis)?;
            let (outer, dim, inner) = axis_extents(t.shape(), axis);
            let x = t.data();
            let mut y = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |d: usize| (o * dim + d) * inner + i;
                    let norm = (0..dim).map(|d| x[at(d)] * x[at(d)]).sum::<f64>().sqrt();
                    for d in 0..dim {
                        y[at(d)] = x[at(d)] / (norm + eps);
                    }
                }
            }
            Tensor::new(t.shape().to_vec(), y)
        })?;
        Ok(self.tape.record(
            out,
            Op::L2Normalize {
                x: self.id,
                axis,
                eps,
            },
            &[self.id],
        ))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.tape.with_value(self.id, |t| t.data().iter().sum::<f64>());
        self.tape.record(Tensor::scalar(s), Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Var<'t> {
        let s = self
            .tape
            .with_value(self.id, |t| t.data().iter().sum::<f64>() / t.len() as f64);
        self.tape.record(Tensor::scalar(s), Op::Mean(self.id), &[self.id])
    }

    fn reduce_axis(self, axis: usize, mean: bool) -> Result<Var<'t>> {
        let out = self.tape.with_value(self.id, |t| {
            check_axis(if mean { "mean_axis" } else { "sum_axis" }, t.shape(), axis)?;
            let (outer, dim, inner) = axis_extents(t.shape(), axis);
            let x = t.data();
            let mut y = vec![0.0; outer * inner];
            for o in 0..outer {
                for d in 0..dim {
                    for i in 0..inner {
                        y[o * inner + i] += x[(o * dim + d) * inner + i];
                    }
                }
            }
            if mean {
                y.iter_mut().for_each(|v| *v /= dim as f64);
            }
            let mut shape = t.shape().to_vec();
            shape.remove(axis);
            Tensor::new(shape, y)
        })?;
        let op = if mean {
            Op::MeanAxis(self.id, axis)
        } else {
            Op::SumAxis(self.id, axis)
        };
        Ok(self.tape.record(out, op, &[self.id]))
    }

    /// Sums along `axis`, removing it.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        self.reduce_axis(axis, false)
    }

    /// Averages along `axis`, removing it.
    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        self.reduce_axis(axis, true)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        let tape = first.tape;
        parts.iter().for_each(|p| tape.check_same(*p));
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let out = {
            let nodes = tape.nodes.borrow();
            let base = nodes[ids[0]].value.shape().to_vec();
            check_axis("concat", &base, axis)?;
            let mut total = 0;
            for &id in &ids {
                let s = nodes[id].value.shape();
                let compatible = s.len() == base.len()
                    && s.iter()
                        .zip(&base)
                        .enumerate()
                        .all(|(ax, (a, b))| ax == axis || a == b);
                if !compatible {
                    return Err(TensorError::Dimension {
                        op: "concat",
                        lhs: base.clone(),
                        rhs: s.to_vec(),
                    });
                }
                total += s[axis];
            }
            let (outer, _, inner) = axis_extents(&base, axis);
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for &id in &ids {
                    let v = &nodes[id].value;
                    let chunk = v.shape()[axis] * inner;
                    data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            let mut shape = base;
            shape[axis] = total;
            Tensor::new(shape, data)?
        };
        Ok(tape.record(out, Op::Concat { parts: ids.clone(), axis }, &ids))
    }

    /// Contiguous range `start..start + len` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let out = self.tape.with_value(self.id, |t| {
            check_axis("slice", t.shape(), axis)?;
            if len == 0 || start + len > t.shape()[axis] {
                return Err(TensorError::Contract(format!(
                    "slice {start}..{} out of range for axis {axis} of {:?}",
                    start + len,
                    t.shape()
                )));
            }
            let (outer, total, inner) = axis_extents(t.shape(), axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let from = (o * total + start) * inner;
                data.extend_from_slice(&t.data()[from..from + len * inner]);
            }
            let mut shape = t.shape().to_vec();
            shape[axis] = len;
            Tensor::new(shape, data)
        })?;
        Ok(self.tape.record(
            out,
            Op::Slice {
                x: self.id,
                axis,
                start,
            },
            &[self.id],
        ))
    }

    /// Dot product of two equally shaped tensors.
    pub fn dot(self, other: Var<'t>) -> Result<Var<'t>> {
        Ok(self.mul(other)?.sum())
    }

    /// Cosine similarity of two equally shaped tensors, treated as flat
    /// vectors. `eps` is added to both norms, so a zero input scores 0.
    pub fn cosine_sim(self, other: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa != sb {
            return Err(TensorError::Dimension {
                op: "cosine_sim",
                lhs: sa,
                rhs: sb,
            });
        }
        let n = sa.iter().product::<usize>();
        let a = self.reshape(&[n])?.l2_normalize(0, eps)?;
        let b = other.reshape(&[n])?.l2_normalize(0, eps)?;
        a.dot(b)
    }
}
