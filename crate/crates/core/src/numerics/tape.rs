//! Reverse-mode differentiation over a fixed operator vocabulary.
//!
//! Every node is evaluated eagerly when it is recorded, so the tape holds
//! the forward values and the recording order is already a topological
//! order. The backward pass walks the tape from the output towards the
//! leaves, visiting each node at most once, and only propagates into nodes
//! that depend on a [`Tape::param`] leaf.
//!
//! Each adjoint is hand-written; the gradient checks in this crate compare
//! them against central differences.

use super::tensor::{axpy, dot, matmul_into};
use super::{NumericsError, ParamVector, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The supported operators.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// Leaf that never receives a gradient.
    Constant,
    /// Differentiable leaf.
    Param,
    /// `x[B×I] · wᵀ + b` with `w[O×I]`, `b[O]`.
    Affine,
    /// `a[M×K] · b[K×N]`.
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Tanh,
    Relu,
    Sum,
    Mean,
    /// `Σ (target − pred)² / divisor` over `(pred, target)`.
    SquaredError { divisor: f64 },
    /// `Σ (mask ⊙ (target − pred))² / divisor` over `(pred, target, mask)`.
    /// The mask must be a constant.
    MaskedSquaredError { divisor: f64 },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param => "param",
            Op::Affine => "affine",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SquaredError { .. } => "squared_error",
            Op::MaskedSquaredError { .. } => "masked_squared_error",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Op::Constant | Op::Param => 0,
            Op::Scale(_) | Op::Tanh | Op::Relu | Op::Sum | Op::Mean => 1,
            Op::MatMul | Op::Add | Op::Sub | Op::Mul | Op::SquaredError { .. } => 2,
            Op::Affine | Op::MaskedSquaredError { .. } => 3,
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    inputs: Vec<usize>,
    value: Tensor,
    requires_grad: bool,
}

/// Record of evaluated operations.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn unsupported(op: &Op, reason: impl Into<String>) -> NumericsError {
    NumericsError::UnsupportedOp {
        op: op.name(),
        reason: reason.into(),
    }
}

fn mismatch(op: &Op, left: &Tensor, right: &Tensor) -> NumericsError {
    NumericsError::ShapeMismatch {
        op: op.name(),
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

/// Forward rule shared by recording and replay.
fn eval_op(op: &Op, xs: &[&Tensor]) -> Result<Tensor, NumericsError> {
    if xs.len() != op.arity() {
        return Err(unsupported(
            op,
            format!("expects {} operands, got {}", op.arity(), xs.len()),
        ));
    }
    match op {
        Op::Constant | Op::Param => Err(unsupported(op, "leaves are created with constant/param")),
        Op::Affine => {
            let (x, w, b) = (xs[0], xs[1], xs[2]);
            if x.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1 {
                return Err(unsupported(op, "expects a 2-D input, 2-D weight and 1-D bias"));
            }
            let (batch, fan_in) = x.dims2()?;
            let (fan_out, w_in) = w.dims2()?;
            if w_in != fan_in {
                return Err(mismatch(op, x, w));
            }
            if b.len() != fan_out {
                return Err(mismatch(op, w, b));
            }
            let mut out = Vec::with_capacity(batch * fan_out);
            for r in 0..batch {
                let xr = x.row(r);
                for o in 0..fan_out {
                    out.push(dot(xr, w.row(o)) + b.data()[o]);
                }
            }
            Tensor::new(vec![batch, fan_out], out)
        }
        Op::MatMul => {
            if xs[0].ndim() != 2 || xs[1].ndim() != 2 {
                return Err(unsupported(op, "expects 2-D operands"));
            }
            xs[0].matmul(xs[1]).map_err(|_| mismatch(op, xs[0], xs[1]))
        }
        Op::Add => xs[0].add(xs[1]).map_err(|_| mismatch(op, xs[0], xs[1])),
        Op::Sub => xs[0].sub(xs[1]).map_err(|_| mismatch(op, xs[0], xs[1])),
        Op::Mul => xs[0].mul(xs[1]).map_err(|_| mismatch(op, xs[0], xs[1])),
        Op::Scale(c) => Ok(xs[0].scale(*c)),
        Op::Tanh => Ok(xs[0].map(f64::tanh)),
        Op::Relu => Ok(xs[0].map(|v| if v > 0.0 { v } else { 0.0 })),
        Op::Sum => Ok(Tensor::scalar(xs[0].sum())),
        Op::Mean => Ok(Tensor::scalar(xs[0].mean())),
        Op::SquaredError { divisor } => {
            let (p, t) = (xs[0], xs[1]);
            if p.shape() != t.shape() {
                return Err(mismatch(op, p, t));
            }
            let mut acc = 0.0;
            for (&pv, &tv) in p.data().iter().zip(t.data()) {
                let r = tv - pv;
                acc += r * r;
            }
            Ok(Tensor::scalar(acc / divisor))
        }
        Op::MaskedSquaredError { divisor } => {
            let (p, t, m) = (xs[0], xs[1], xs[2]);
            if p.shape() != t.shape() {
                return Err(mismatch(op, p, t));
            }
            if p.shape() != m.shape() {
                return Err(mismatch(op, p, m));
            }
            let mut acc = 0.0;
            for ((&pv, &tv), &mv) in p.data().iter().zip(t.data()).zip(m.data()) {
                let r = mv * (tv - pv);
                acc += r * r;
            }
            Ok(Tensor::scalar(acc / divisor))
        }
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

    fn push_leaf(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            inputs: Vec::new(),
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(Op::Constant, value, false)
    }

    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(Op::Param, value, true)
    }

    /// Evaluates `op` on recorded inputs and records the result.
    ///
    /// Operand shapes outside the operator's contract are rejected here,
    /// before anything is appended to the tape.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId, NumericsError> {
        for id in inputs {
            if id.0 >= self.nodes.len() {
                return Err(NumericsError::UnknownNode(id.0));
            }
        }
        if let Op::MaskedSquaredError { .. } = op {
            if inputs.len() == 3 && self.nodes[inputs[2].0].requires_grad {
                return Err(unsupported(&op, "the mask must not depend on parameters"));
            }
        }
        let value = {
            let xs: Vec<&Tensor> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
            eval_op(&op, &xs)?
        };
        let requires_grad = inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        self.nodes.push(Node {
            op,
            inputs: inputs.iter().map(|id| id.0).collect(),
            value,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.apply(Op::Affine, &[x, w, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, NumericsError> {
        self.apply(Op::Scale(c), &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.apply(Op::Tanh, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.apply(Op::Relu, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.apply(Op::Sum, &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        self.apply(Op::Mean, &[a])
    }

    pub fn squared_error(
        &mut self,
        pred: NodeId,
        target: NodeId,
        divisor: f64,
    ) -> Result<NodeId, NumericsError> {
        self.apply(Op::SquaredError { divisor }, &[pred, target])
    }

    pub fn masked_squared_error(
        &mut self,
        pred: NodeId,
        target: NodeId,
        mask: NodeId,
        divisor: f64,
    ) -> Result<NodeId, NumericsError> {
        self.apply(Op::MaskedSquaredError { divisor }, &[pred, target, mask])
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    /// Re-evaluates every non-leaf node from the recorded leaf values.
    pub fn replay(&self) -> Result<Vec<Tensor>, NumericsError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Constant | Op::Param => node.value.clone(),
                _ => {
                    let xs: Vec<&Tensor> = node.inputs.iter().map(|&i| &values[i]).collect();
                    eval_op(&node.op, &xs)?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Gradients of the scalar node `output` with respect to every node
    /// that depends on a parameter leaf.
    pub fn backward(&self, output: NodeId) -> Result<Gradients, NumericsError> {
        let out = self
            .nodes
            .get(output.0)
            .ok_or(NumericsError::UnknownNode(output.0))?;
        if !out.value.is_scalar() {
            return Err(NumericsError::NonScalarOutput(out.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut visit_order = Vec::new();
        if out.requires_grad {
            grads[output.0] = Some(Tensor::full(out.value.shape(), 1.0));
        }
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || node.inputs.is_empty() {
                if grads[idx].is_some() {
                    visit_order.push(NodeId(idx));
                }
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            visit_order.push(NodeId(idx));
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, visit_order })
    }

    fn propagate(
        &self,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), NumericsError> {
        let needs = |k: usize| self.nodes[node.inputs[k]].requires_grad;
        let input = |k: usize| &self.nodes[node.inputs[k]].value;
        let mut contribute = |k: usize, t: Tensor| -> Result<(), NumericsError> {
            let slot = &mut grads[node.inputs[k]];
            match slot {
                Some(acc) => acc.axpy(1.0, &t),
                None => {
                    *slot = Some(t);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::Affine => {
                let (x, w) = (input(0), input(1));
                let (batch, fan_in) = x.dims2()?;
                let fan_out = w.dims2()?.0;
                if needs(0) {
                    let mut dx = vec![0.0; batch * fan_in];
                    matmul_into(g.data(), w.data(), &mut dx, batch, fan_out, fan_in);
                    contribute(0, Tensor::new(vec![batch, fan_in], dx)?)?;
                }
                if needs(1) {
                    let mut dw = vec![0.0; fan_out * fan_in];
                    for r in 0..batch {
                        let xr = x.row(r);
                        let gr = g.row(r);
                        for o in 0..fan_out {
                            if gr[o] != 0.0 {
                                axpy(gr[o], xr, &mut dw[o * fan_in..(o + 1) * fan_in]);
                            }
                        }
                    }
                    contribute(1, Tensor::new(vec![fan_out, fan_in], dw)?)?;
                }
                if needs(2) {
                    let mut db = vec![0.0; fan_out];
                    for r in 0..batch {
                        axpy(1.0, g.row(r), &mut db);
                    }
                    contribute(2, Tensor::new(vec![fan_out], db)?)?;
                }
            }
            Op::MatMul => {
                let (a, b) = (input(0), input(1));
                let (m, k) = a.dims2()?;
                let n = b.dims2()?.1;
                if needs(0) {
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let gi = g.row(i);
                        for p in 0..k {
                            da[i * k + p] = dot(gi, b.row(p));
                        }
                    }
                    contribute(0, Tensor::new(vec![m, k], da)?)?;
                }
                if needs(1) {
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let gi = g.row(i);
                        for p in 0..k {
                            let aip = a.data()[i * k + p];
                            if aip != 0.0 {
                                axpy(aip, gi, &mut db[p * n..(p + 1) * n]);
                            }
                        }
                    }
                    contribute(1, Tensor::new(vec![k, n], db)?)?;
                }
            }
            Op::Add => {
                if needs(0) {
                    contribute(0, g.clone())?;
                }
                if needs(1) {
                    contribute(1, g.clone())?;
                }
            }
            Op::Sub => {
                if needs(0) {
                    contribute(0, g.clone())?;
                }
                if needs(1) {
                    contribute(1, g.scale(-1.0))?;
                }
            }
            Op::Mul => {
                if needs(0) {
                    contribute(0, g.mul(input(1))?)?;
                }
                if needs(1) {
                    contribute(1, g.mul(input(0))?)?;
                }
            }
            Op::Scale(c) => contribute(0, g.scale(*c))?,
            Op::Tanh => contribute(0, g.zip_with(&node.value, |gv, y| gv * (1.0 - y * y))?)?,
            Op::Relu => {
                contribute(0, g.zip_with(input(0), |gv, x| if x > 0.0 { gv } else { 0.0 })?)?
            }
            Op::Sum => {
                let g0 = g.data()[0];
                contribute(0, Tensor::full(input(0).shape(), g0))?;
            }
            Op::Mean => {
                let x = input(0);
                contribute(0, Tensor::full(x.shape(), g.data()[0] / x.len() as f64))?;
            }
            Op::SquaredError { divisor } => {
                let (p, t) = (input(0), input(1));
                let c = 2.0 * g.data()[0] / divisor;
                if needs(0) {
                    contribute(0, p.zip_with(t, |pv, tv| -c * (tv - pv))?)?;
                }
                if needs(1) {
                    contribute(1, p.zip_with(t, |pv, tv| c * (tv - pv))?)?;
                }
            }
            Op::MaskedSquaredError { divisor } => {
                let (p, t, m) = (input(0), input(1), input(2));
                let c = 2.0 * g.data()[0] / divisor;
                let r = t.sub(p)?.mul(m)?.mul(m)?;
                if needs(0) {
                    contribute(0, r.scale(-c))?;
                }
                if needs(1) {
                    contribute(1, r.scale(c))?;
                }
            }
        }
        Ok(())
    }
}

/// Result of [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visit_order: Vec<NodeId>,
}

impl Gradients {
    /// Gradient at `id`, or `None` if the output does not depend on it
    /// through any parameter.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Nodes in the order the backward pass processed them.
    pub fn visit_order(&self) -> &[NodeId] {
        &self.visit_order
    }
}

/// Tape nodes holding the segments of a [`ParamVector`].
#[derive(Clone, Debug)]
pub struct ParamNodes {
    entries: Vec<(String, NodeId)>,
}

impl ParamNodes {
    /// Records one [`Op::Param`] leaf per segment of `theta`.
    pub fn record(tape: &mut Tape, theta: &ParamVector) -> Self {
        let entries = theta
            .unflatten()
            .into_iter()
            .map(|(name, t)| (name, tape.param(t)))
            .collect();
        Self { entries }
    }

    pub fn get(&self, name: &str) -> Result<NodeId, NumericsError> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .ok_or_else(|| NumericsError::UnknownSegment(name.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.iter().map(|(_, id)| *id)
    }

    /// Gathers the gradients of the parameter leaves into the layout of
    /// `theta`; unreachable parameters get zeros.
    pub fn collect(&self, grads: &Gradients, theta: &ParamVector) -> ParamVector {
        let mut out = theta.zeros_like();
        for (name, id) in &self.entries {
            if let Some(g) = grads.get(*id) {
                out.slice_mut(name)
                    .expect("segment recorded from theta")
                    .copy_from_slice(g.data());
            }
        }
        out
    }
}

fn scalar_of(tape: &Tape, id: NodeId) -> Result<f64, NumericsError> {
    tape.value(id)
        .item()
        .ok_or_else(|| NumericsError::NonScalarOutput(tape.value(id).shape().to_vec()))
}

/// Value and reverse-mode gradient of the scalar function recorded by `f`.
pub fn value_and_grad<F>(f: F, theta: &ParamVector) -> Result<(f64, ParamVector), NumericsError>
where
    F: Fn(&mut Tape, &ParamNodes) -> Result<NodeId, NumericsError>,
{
    let (values, mut grads) = values_and_grads(|tape, p| Ok(vec![f(tape, p)?]), theta)?;
    Ok((values[0], grads.remove(0)))
}

/// Several scalar outputs of one shared forward pass, each with its own
/// backward pass.
pub fn values_and_grads<F>(
    f: F,
    theta: &ParamVector,
) -> Result<(Vec<f64>, Vec<ParamVector>), NumericsError>
where
    F: Fn(&mut Tape, &ParamNodes) -> Result<Vec<NodeId>, NumericsError>,
{
    let mut tape = Tape::new();
    let params = ParamNodes::record(&mut tape, theta);
    let outputs = f(&mut tape, &params)?;
    let mut values = Vec::with_capacity(outputs.len());
    let mut grads = Vec::with_capacity(outputs.len());
    for out in outputs {
        values.push(scalar_of(&tape, out)?);
        let g = tape.backward(out)?;
        grads.push(params.collect(&g, theta));
    }
    Ok((values, grads))
}

/// Forward-only evaluation of the scalar outputs recorded by `f`.
pub fn evaluate<F>(f: F, theta: &ParamVector) -> Result<Vec<f64>, NumericsError>
where
    F: Fn(&mut Tape, &ParamNodes) -> Result<Vec<NodeId>, NumericsError>,
{
    let mut tape = Tape::new();
    let params = ParamNodes::record(&mut tape, theta);
    let outputs = f(&mut tape, &params)?;
    outputs.into_iter().map(|o| scalar_of(&tape, o)).collect()
}
