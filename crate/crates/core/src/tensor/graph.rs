//! Forward evaluation: op kinds, shape inference and the node arena.

use super::conv::{self, ConvGeometry, Operand};
use super::{Element, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(super) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// Leaf holding a caller-provided tensor.
    Input,
    /// Inputs `[x, weight]` or `[x, weight, bias]`; weight is `out × in × k × k`.
    Conv2d { stride: usize, padding: usize },
    /// Inputs `[x, weight]` or `[x, weight, bias]`; weight is `in × out × k × k`.
    ConvTranspose2d { stride: usize, padding: usize },
    /// Training: `[x, gamma, beta]`. Eval: `[x, gamma, beta, running_mean, running_var]`.
    BatchNorm2d { eps: f64, training: bool },
    LeakyRelu { slope: f64 },
    Relu,
    Sigmoid,
    Tanh,
    /// `ln(1 + e^x)`, evaluated in the overflow-free form.
    Softplus,
    ConcatChannels,
    Add,
    Mul,
    Sub,
    Div,
    Abs,
    Mean,
    Sum,
    Square,
    Log,
    ScalarMul { factor: f64 },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Input => "input",
            OpKind::Conv2d { .. } => "conv2d",
            OpKind::ConvTranspose2d { .. } => "conv_transpose2d",
            OpKind::BatchNorm2d { .. } => "batchnorm2d",
            OpKind::LeakyRelu { .. } => "leaky_relu",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Softplus => "softplus",
            OpKind::ConcatChannels => "concat_channels",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Sub => "sub",
            OpKind::Div => "div",
            OpKind::Abs => "abs",
            OpKind::Mean => "mean",
            OpKind::Sum => "sum",
            OpKind::Square => "square",
            OpKind::Log => "log",
            OpKind::ScalarMul { .. } => "scalar_mul",
        }
    }

    /// Output shape for the given input shapes, or the reason they are rejected.
    pub fn infer_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let op = self.name();
        let arity = |n: &[usize]| -> Result<()> {
            if n.contains(&inputs.len()) {
                Ok(())
            } else {
                Err(Error::shape(op, format!("expected {n:?} inputs, got {}", inputs.len())))
            }
        };
        match self {
            OpKind::Input => Err(Error::shape(op, "input nodes carry their own tensor")),
            OpKind::Conv2d { stride, padding } | OpKind::ConvTranspose2d { stride, padding } => {
                arity(&[2, 3])?;
                let (x, w) = (inputs[0], inputs[1]);
                if x.len() != 4 || w.len() != 4 {
                    return Err(Error::shape(op, format!("need 4-D input and weight, got {x:?}, {w:?}")));
                }
                if w[2] != w[3] {
                    return Err(Error::shape(op, format!("kernel must be square, got {w:?}")));
                }
                let transposed = matches!(self, OpKind::ConvTranspose2d { .. });
                let (w_in, w_out) = if transposed { (w[0], w[1]) } else { (w[1], w[0]) };
                if x[1] != w_in {
                    return Err(Error::shape(op, format!("input has {} channels, weight expects {w_in}", x[1])));
                }
                if let Some(b) = inputs.get(2) {
                    if *b != [w_out] {
                        return Err(Error::shape(op, format!("bias shape {b:?}, expected [{w_out}]")));
                    }
                }
                if *stride == 0 {
                    return Err(Error::shape(op, "stride must be positive"));
                }
                let extent = |n: usize| {
                    if transposed {
                        conv::conv_transpose_out(n, w[2], *stride, *padding)
                    } else {
                        conv::conv_out(n, w[2], *stride, *padding)
                    }
                };
                match (extent(x[2]), extent(x[3])) {
                    (Some(h), Some(wd)) => Ok(vec![x[0], w_out, h, wd]),
                    _ => Err(Error::shape(op, format!("kernel {} does not fit input {x:?}", w[2]))),
                }
            }
            OpKind::BatchNorm2d { training, .. } => {
                arity(if *training { &[3] } else { &[5] })?;
                let x = inputs[0];
                if x.len() != 4 {
                    return Err(Error::shape(op, format!("need 4-D input, got {x:?}")));
                }
                for p in &inputs[1..] {
                    if *p != [x[1]] {
                        return Err(Error::shape(op, format!("per-channel tensor {p:?} for {} channels", x[1])));
                    }
                }
                Ok(x.to_vec())
            }
            OpKind::ConcatChannels => {
                if inputs.is_empty() {
                    return Err(Error::shape(op, "nothing to concatenate"));
                }
                let first = inputs[0];
                if first.len() != 4 {
                    return Err(Error::shape(op, format!("need 4-D inputs, got {first:?}")));
                }
                let mut channels = 0;
                for s in inputs {
                    if s.len() != 4 || s[0] != first[0] || s[2] != first[2] || s[3] != first[3] {
                        return Err(Error::shape(op, format!("{s:?} incompatible with {first:?}")));
                    }
                    channels += s[1];
                }
                Ok(vec![first[0], channels, first[2], first[3]])
            }
            OpKind::Add | OpKind::Mul | OpKind::Sub | OpKind::Div => {
                arity(&[2])?;
                broadcast_shape(inputs[0], inputs[1]).ok_or_else(|| {
                    Error::shape(op, format!("cannot broadcast {:?} with {:?}", inputs[0], inputs[1]))
                })
            }
            OpKind::Mean | OpKind::Sum => {
                arity(&[1])?;
                Ok(vec![1])
            }
            OpKind::LeakyRelu { .. }
            | OpKind::Relu
            | OpKind::Sigmoid
            | OpKind::Tanh
            | OpKind::Softplus
            | OpKind::Abs
            | OpKind::Square
            | OpKind::Log
            | OpKind::ScalarMul { .. } => {
                arity(&[1])?;
                Ok(inputs[0].to_vec())
            }
        }
    }
}

/// Equal shapes, a single-element operand, or equal-rank shapes whose
/// differing extents are 1 on one side.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a == b {
        return Some(a.to_vec());
    }
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if nb == 1 {
        return Some(a.to_vec());
    }
    if na == 1 {
        return Some(b.to_vec());
    }
    if a.len() != b.len() {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        })
        .collect()
}

/// Maps output element indices to operand element indices.
pub(crate) enum Bcast {
    Same,
    Scalar,
    Map(Vec<usize>),
}

impl Bcast {
    pub(crate) fn new(out: &[usize], operand: &[usize]) -> Self {
        if out == operand {
            return Bcast::Same;
        }
        if operand.iter().product::<usize>() == 1 {
            return Bcast::Scalar;
        }
        let rank = out.len();
        let mut op_strides = vec![0usize; rank];
        let mut acc = 1;
        for d in (0..rank).rev() {
            op_strides[d] = if operand[d] == 1 { 0 } else { acc };
            acc *= operand[d];
        }
        let numel: usize = out.iter().product();
        let mut map = Vec::with_capacity(numel);
        let mut counter = vec![0usize; rank];
        let mut offset = 0usize;
        for _ in 0..numel {
            map.push(offset);
            for d in (0..rank).rev() {
                counter[d] += 1;
                offset += op_strides[d];
                if counter[d] < out[d] {
                    break;
                }
                offset -= op_strides[d] * counter[d];
                counter[d] = 0;
            }
        }
        Bcast::Map(map)
    }

    #[inline]
    pub(crate) fn at(&self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Scalar => 0,
            Bcast::Map(m) => m[i],
        }
    }
}

/// An operation applied to earlier nodes of the same graph.
#[derive(Clone, Debug, PartialEq)]
pub struct OpNode {
    pub kind: OpKind,
    pub inputs: Vec<NodeId>,
}

pub(super) enum Saved<T> {
    Nothing,
    Columns(Vec<T>),
    BatchStats { mean: Vec<T>, var: Vec<T>, inv_std: Vec<T> },
}

pub(super) struct Node<T> {
    pub(super) op: OpNode,
    pub(super) value: Tensor<T>,
    pub(super) requires_grad: bool,
    pub(super) saved: Saved<T>,
}

/// Arena of evaluated nodes. Nodes are evaluated once, when added, and can
/// only reference earlier nodes, so the graph is acyclic by construction and
/// node order is a topological order.
pub struct Graph<T: Element> {
    pub(super) nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf. The node takes part in differentiation iff the tensor
    /// has `requires_grad` set.
    pub fn input(&mut self, tensor: Tensor<T>) -> NodeId {
        let requires_grad = tensor.requires_grad();
        let mut value = tensor;
        value.clear_grad();
        self.push(OpNode { kind: OpKind::Input, inputs: Vec::new() }, value, requires_grad, Saved::Nothing)
    }

    /// Adds a leaf that never receives gradient.
    pub fn constant(&mut self, mut tensor: Tensor<T>) -> NodeId {
        tensor.set_requires_grad(false);
        self.input(tensor)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &OpNode {
        &self.nodes[id.0].op
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Per-channel batch mean and biased variance recorded by a
    /// training-mode batchnorm node.
    pub fn batch_stats(&self, id: NodeId) -> Option<(&[T], &[T])> {
        match &self.nodes[id.0].saved {
            Saved::BatchStats { mean, var, .. } => Some((mean, var)),
            _ => None,
        }
    }

    fn push(&mut self, op: OpNode, value: Tensor<T>, requires_grad: bool, saved: Saved<T>) -> NodeId {
        self.nodes.push(Node { op, value, requires_grad, saved });
        NodeId(self.nodes.len() - 1)
    }

    /// Evaluates `node` against the values already in the graph and appends it.
    pub fn evaluate(&mut self, node: OpNode) -> Result<NodeId> {
        if let Some(bad) = node.inputs.iter().find(|id| id.0 >= self.nodes.len()) {
            return Err(Error::InvalidArgument(format!("node {} is not in this graph", bad.0)));
        }
        let shapes: Vec<&[usize]> = node.inputs.iter().map(|id| self.nodes[id.0].value.shape()).collect();
        let out_shape = node.kind.infer_shape(&shapes)?;
        let (data, saved) = self.forward(&node, &out_shape);
        debug_assert_eq!(data.len(), out_shape.iter().product::<usize>());
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: node.kind.name() });
        }
        let requires_grad = node.inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(node, value, requires_grad, saved))
    }

    fn data(&self, id: NodeId) -> &[T] {
        self.nodes[id.0].value.data()
    }

    fn forward(&self, node: &OpNode, out_shape: &[usize]) -> (Vec<T>, Saved<T>) {
        let inputs = &node.inputs;
        let unary = |f: &dyn Fn(T) -> T| self.data(inputs[0]).iter().map(|&v| f(v)).collect::<Vec<T>>();
        match &node.kind {
            OpKind::Input => unreachable!("input nodes are created by Graph::input"),
            OpKind::Conv2d { stride, padding } => self.conv2d_forward(inputs, out_shape, *stride, *padding),
            OpKind::ConvTranspose2d { stride, padding } => {
                self.conv_transpose2d_forward(inputs, out_shape, *stride, *padding)
            }
            OpKind::BatchNorm2d { eps, training } => self.batchnorm_forward(inputs, *eps, *training),
            OpKind::LeakyRelu { slope } => {
                let slope = T::from_f64(*slope);
                (unary(&|v| if v > T::ZERO { v } else { v * slope }), Saved::Nothing)
            }
            OpKind::Relu => (unary(&|v| if v > T::ZERO { v } else { T::ZERO }), Saved::Nothing),
            OpKind::Sigmoid => (unary(&sigmoid), Saved::Nothing),
            OpKind::Tanh => (unary(&|v| v.tanh()), Saved::Nothing),
            OpKind::Softplus => (unary(&softplus), Saved::Nothing),
            OpKind::Abs => (unary(&|v| v.abs()), Saved::Nothing),
            OpKind::Square => (unary(&|v| v * v), Saved::Nothing),
            OpKind::Log => (unary(&|v| v.ln()), Saved::Nothing),
            OpKind::ScalarMul { factor } => {
                let f = T::from_f64(*factor);
                (unary(&|v| v * f), Saved::Nothing)
            }
            OpKind::Mean | OpKind::Sum => {
                let x = self.data(inputs[0]);
                let total: f64 = x.iter().map(|v| v.as_f64()).sum();
                let v = if matches!(node.kind, OpKind::Mean) { total / x.len() as f64 } else { total };
                (vec![T::from_f64(v)], Saved::Nothing)
            }
            OpKind::ConcatChannels => {
                let (batch, area) = (out_shape[0], out_shape[2] * out_shape[3]);
                let mut out = Vec::with_capacity(out_shape.iter().product());
                for b in 0..batch {
                    for id in inputs {
                        let v = &self.nodes[id.0].value;
                        let plane = v.shape()[1] * area;
                        out.extend_from_slice(&v.data()[b * plane..(b + 1) * plane]);
                    }
                }
                (out, Saved::Nothing)
            }
            OpKind::Add | OpKind::Mul | OpKind::Sub | OpKind::Div => {
                let (a, b) = (&self.nodes[inputs[0].0].value, &self.nodes[inputs[1].0].value);
                let ma = Bcast::new(out_shape, a.shape());
                let mb = Bcast::new(out_shape, b.shape());
                let (ad, bd) = (a.data(), b.data());
                let n: usize = out_shape.iter().product();
                let f: fn(T, T) -> T = match node.kind {
                    OpKind::Add => |x, y| x + y,
                    OpKind::Sub => |x, y| x - y,
                    OpKind::Mul => |x, y| x * y,
                    _ => |x, y| x / y,
                };
                ((0..n).map(|i| f(ad[ma.at(i)], bd[mb.at(i)])).collect(), Saved::Nothing)
            }
        }
    }

    fn conv2d_forward(&self, inputs: &[NodeId], out_shape: &[usize], stride: usize, padding: usize) -> (Vec<T>, Saved<T>) {
        let x = &self.nodes[inputs[0].0].value;
        let w = &self.nodes[inputs[1].0].value;
        let (batch, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (cout, k) = (w.shape()[0], w.shape()[2]);
        let g = ConvGeometry {
            channels: cin,
            in_h: h,
            in_w: wd,
            out_h: out_shape[2],
            out_w: out_shape[3],
            kernel: k,
            stride,
            padding,
        };
        let cols = conv::im2col(x.data(), batch, &g);
        let ncols = batch * g.out_area();
        let mut out_cm = vec![T::ZERO; cout * ncols];
        conv::matmul(Operand::plain(w.data(), cout, g.col_rows()), Operand::plain(&cols, g.col_rows(), ncols), &mut out_cm, false);
        if let Some(bias) = inputs.get(2) {
            add_row_bias(&mut out_cm, self.data(*bias), ncols);
        }
        (conv::from_channel_major(&out_cm, batch, cout, g.out_area()), Saved::Columns(cols))
    }

    fn conv_transpose2d_forward(
        &self,
        inputs: &[NodeId],
        out_shape: &[usize],
        stride: usize,
        padding: usize,
    ) -> (Vec<T>, Saved<T>) {
        let x = &self.nodes[inputs[0].0].value;
        let w = &self.nodes[inputs[1].0].value;
        let (batch, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (cout, k) = (w.shape()[1], w.shape()[2]);
        let g = transposed_geometry(cout, h, wd, out_shape, k, stride, padding);
        let in_area = h * wd;
        let x_cm = conv::to_channel_major(x.data(), batch, cin, in_area);
        let ncols = batch * in_area;
        let mut cols = vec![T::ZERO; g.col_rows() * ncols];
        conv::matmul(Operand::transposed(w.data(), cin, g.col_rows()), Operand::plain(&x_cm, cin, ncols), &mut cols, false);
        let mut out = conv::col2im(&cols, batch, &g);
        if let Some(bias) = inputs.get(2) {
            let bias = self.data(*bias);
            let area = g.in_h * g.in_w;
            for (plane, chunk) in out.chunks_mut(area).enumerate() {
                let b = bias[plane % cout];
                chunk.iter_mut().for_each(|v| *v += b);
            }
        }
        (out, Saved::Columns(x_cm))
    }

    fn batchnorm_forward(&self, inputs: &[NodeId], eps: f64, training: bool) -> (Vec<T>, Saved<T>) {
        let x = &self.nodes[inputs[0].0].value;
        let gamma = self.data(inputs[1]);
        let beta = self.data(inputs[2]);
        let (batch, channels) = (x.shape()[0], x.shape()[1]);
        let area = x.shape()[2] * x.shape()[3];
        let xd = x.data();
        let count = (batch * area) as f64;
        let mut mean = vec![T::ZERO; channels];
        let mut var = vec![T::ZERO; channels];
        let mut inv_std = vec![T::ZERO; channels];
        for c in 0..channels {
            let (m, v) = if training {
                let mut s = 0.0f64;
                for b in 0..batch {
                    s += xd[(b * channels + c) * area..][..area].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let m = s / count;
                let mut sq = 0.0f64;
                for b in 0..batch {
                    sq += xd[(b * channels + c) * area..][..area]
                        .iter()
                        .map(|v| {
                            let d = v.as_f64() - m;
                            d * d
                        })
                        .sum::<f64>();
                }
                (m, sq / count)
            } else {
                (self.data(inputs[3])[c].as_f64(), self.data(inputs[4])[c].as_f64())
            };
            mean[c] = T::from_f64(m);
            var[c] = T::from_f64(v);
            inv_std[c] = T::from_f64(1.0 / (v + eps).sqrt());
        }
        let mut out = vec![T::ZERO; xd.len()];
        for b in 0..batch {
            for c in 0..channels {
                let scale = gamma[c] * inv_std[c];
                let shift = beta[c] - mean[c] * scale;
                let range = (b * channels + c) * area..(b * channels + c + 1) * area;
                for (o, &v) in out[range.clone()].iter_mut().zip(&xd[range]) {
                    *o = v * scale + shift;
                }
            }
        }
        (out, Saved::BatchStats { mean, var, inv_std })
    }

    // ─── convenience constructors ───────────────────────────────────────

    fn op1(&mut self, kind: OpKind, x: NodeId) -> Result<NodeId> {
        self.evaluate(OpNode { kind, inputs: vec![x] })
    }

    fn op2(&mut self, kind: OpKind, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.evaluate(OpNode { kind, inputs: vec![a, b] })
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, bias: Option<NodeId>, stride: usize, padding: usize) -> Result<NodeId> {
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        self.evaluate(OpNode { kind: OpKind::Conv2d { stride, padding }, inputs })
    }

    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        self.evaluate(OpNode { kind: OpKind::ConvTranspose2d { stride, padding }, inputs })
    }

    /// Batch-statistics normalisation (training mode).
    pub fn batch_norm2d_train(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        self.evaluate(OpNode { kind: OpKind::BatchNorm2d { eps, training: true }, inputs: vec![x, gamma, beta] })
    }

    /// Normalisation with stored running statistics (eval mode).
    pub fn batch_norm2d_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: NodeId,
        running_var: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        self.evaluate(OpNode {
            kind: OpKind::BatchNorm2d { eps, training: false },
            inputs: vec![x, gamma, beta, running_mean, running_var],
        })
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        self.op1(OpKind::LeakyRelu { slope }, x)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.op1(OpKind::Relu, x)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.op1(OpKind::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.op1(OpKind::Tanh, x)
    }

    pub fn softplus(&mut self, x: NodeId) -> Result<NodeId> {
        self.op1(OpKind::Softplus, x)
    }

    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        self.op1(OpKind::Abs, x)
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.op1(OpKind::Square, x)
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        self.op1(OpKind::Log, x)
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.op1(OpKind::Mean, x)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.op1(OpKind::Sum, x)
    }

    pub fn scalar_mul(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        self.op1(OpKind::ScalarMul { factor }, x)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.op2(OpKind::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.op2(OpKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.op2(OpKind::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.op2(OpKind::Div, a, b)
    }

    pub fn concat_channels(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.evaluate(OpNode { kind: OpKind::ConcatChannels, inputs: parts.to_vec() })
    }

    /// `a + c` for a plain number `c`.
    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let c = self.constant(Tensor::scalar(T::from_f64(c)));
        self.add(a, c)
    }
}

pub(super) fn transposed_geometry(
    out_channels: usize,
    in_h: usize,
    in_w: usize,
    out_shape: &[usize],
    kernel: usize,
    stride: usize,
    padding: usize,
) -> ConvGeometry {
    // The adjoint convolution maps the (larger) output plane back onto the input plane.
    ConvGeometry {
        channels: out_channels,
        in_h: out_shape[2],
        in_w: out_shape[3],
        out_h: in_h,
        out_w: in_w,
        kernel,
        stride,
        padding,
    }
}

fn add_row_bias<T: Element>(m: &mut [T], bias: &[T], ncols: usize) {
    for (row, chunk) in m.chunks_mut(ncols).enumerate() {
        let b = bias[row];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

#[inline]
pub(super) fn sigmoid<T: Element>(v: T) -> T {
    if v >= T::ZERO {
        T::ONE / (T::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::ONE + e)
    }
}

#[inline]
pub(super) fn softplus<T: Element>(v: T) -> T {
    v.max(T::ZERO) + (-v.abs()).exp().ln_1p()
}
