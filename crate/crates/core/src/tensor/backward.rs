//! Reverse-mode sweep over a [`Graph`].

use super::conv::{self, ConvGeometry, Operand};
use super::graph::{sigmoid, transposed_geometry, Bcast, Graph, NodeId, OpKind, Saved};
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// dLoss/dNode for every node the loss depends on through differentiable paths.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor shaped like the node; zeros when unreachable.
    pub fn wrt(&self, graph: &Graph<T>, id: NodeId) -> Tensor<T> {
        let shape = graph.value(id).shape();
        match self.get(id) {
            Some(g) => Tensor::new(shape.to_vec(), g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// Adds the gradient of `id` into `tensor.grad`.
    pub fn accumulate_into(&self, id: NodeId, tensor: &mut Tensor<T>) -> Result<()> {
        match self.get(id) {
            Some(g) => tensor.accumulate_grad(g),
            None => tensor.accumulate_grad(&vec![T::ZERO; tensor.numel()]),
        }
    }
}

fn add_into<T: Element>(slot: &mut Option<Vec<T>>, delta: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
        None => *slot = Some(delta),
    }
}

impl<T: Element> Graph<T> {
    /// Propagates d(loss)/d(node) back to every node that requires grad.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let shape = self.value(loss).shape();
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss { shape: shape.to_vec() });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::ONE]);
        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !matches!(node.op.kind, OpKind::Input) {
                for (slot, delta) in self.node_vjp(NodeId(idx), &dy) {
                    add_into(&mut grads[slot.0], delta);
                }
            }
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Vector-Jacobian products of one node with respect to each of its
    /// grad-requiring inputs.
    fn node_vjp(&self, id: NodeId, dy: &[T]) -> Vec<(NodeId, Vec<T>)> {
        let node = &self.nodes[id.0];
        let inputs = &node.op.inputs;
        let y = node.value.data();
        let mut out = Vec::with_capacity(inputs.len());
        let elementwise = |f: &dyn Fn(T, T, T) -> T| -> Vec<T> {
            let x = self.value(inputs[0]).data();
            dy.iter().zip(x).zip(y).map(|((&g, &xv), &yv)| f(g, xv, yv)).collect()
        };
        match &node.op.kind {
            OpKind::Input => {}
            OpKind::Conv2d { stride, padding } => return self.conv2d_vjp(id, dy, *stride, *padding),
            OpKind::ConvTranspose2d { stride, padding } => {
                return self.conv_transpose2d_vjp(id, dy, *stride, *padding)
            }
            OpKind::BatchNorm2d { training, .. } => return self.batchnorm_vjp(id, dy, *training),
            OpKind::LeakyRelu { slope } => {
                let slope = T::from_f64(*slope);
                if self.wants(inputs[0]) {
                    out.push((inputs[0], elementwise(&|g, x, _| if x > T::ZERO { g } else { g * slope })));
                }
            }
            OpKind::Relu => {
                if self.wants(inputs[0]) {
                    out.push((inputs[0], elementwise(&|g, x, _| if x > T::ZERO { g } else { T::ZERO })));
                }
            }
            OpKind::Sigmoid => {
                if self.wants(inputs[0]) {
                    out.push((inputs[0], elementwise(&|g, _, s| g * s * (T::ONE - s))));
                }
            }
            OpKind::Tanh => {
                if self.wants(inputs[0]) {
                    out.push((inputs[0], elementwise(&|g, _, t| g * (T::ONE - t * t))));
                }
            }
            OpKind::Softplus => {
                if self.wants(inputs[0]) {
                    out.push((inputs[0], elementwise(&|g, x, _| g * sigmoid(x))));
                }
            }
            OpKind::Abs => {
                if self.wants(inputs[0]) {
                    out.push((
                        inputs[0],
                        elementwise(&|g, x, _| {
                            if x > T::ZERO {
                                g
                            } else if x < T::ZERO {
                                -g
                            } else {
                                T::ZERO
                            }
                        }),
                    ));
                }
            }
            OpKind::Square => {
                if self.wants(inputs[0]) {
                    let two = T::from_f64(2.0);
                    out.push((inputs[0], elementwise(&|g, x, _| g * two * x)));
                }
            }
            OpKind::Log => {
                if self.wants(inputs[0]) {
                    out.push((inputs[0], elementwise(&|g, x, _| g / x)));
                }
            }
            OpKind::ScalarMul { factor } => {
                if self.wants(inputs[0]) {
                    let f = T::from_f64(*factor);
                    out.push((inputs[0], dy.iter().map(|&g| g * f).collect()));
                }
            }
            OpKind::Mean | OpKind::Sum => {
                if self.wants(inputs[0]) {
                    let n = self.value(inputs[0]).numel();
                    let g = if matches!(node.op.kind, OpKind::Mean) { dy[0] / T::from_f64(n as f64) } else { dy[0] };
                    out.push((inputs[0], vec![g; n]));
                }
            }
            OpKind::ConcatChannels => {
                let shape = node.value.shape();
                let (batch, area) = (shape[0], shape[2] * shape[3]);
                let mut offset = 0;
                let mut per_input: Vec<Vec<T>> = inputs.iter().map(|_| Vec::new()).collect();
                for _ in 0..batch {
                    for (k, inp) in inputs.iter().enumerate() {
                        let plane = self.value(*inp).shape()[1] * area;
                        if self.wants(*inp) {
                            per_input[k].extend_from_slice(&dy[offset..offset + plane]);
                        }
                        offset += plane;
                    }
                }
                for (k, inp) in inputs.iter().enumerate() {
                    if self.wants(*inp) {
                        out.push((*inp, std::mem::take(&mut per_input[k])));
                    }
                }
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
                let out_shape = node.value.shape();
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                let ma = Bcast::new(out_shape, a.shape());
                let mb = Bcast::new(out_shape, b.shape());
                let (ad, bd) = (a.data(), b.data());
                let kind = node.op.kind.clone();
                if self.wants(inputs[0]) {
                    let mut ga = vec![T::ZERO; ad.len()];
                    for (i, &g) in dy.iter().enumerate() {
                        let d = match kind {
                            OpKind::Add | OpKind::Sub => g,
                            OpKind::Mul => g * bd[mb.at(i)],
                            _ => g / bd[mb.at(i)],
                        };
                        ga[ma.at(i)] += d;
                    }
                    out.push((inputs[0], ga));
                }
                if self.wants(inputs[1]) {
                    let mut gb = vec![T::ZERO; bd.len()];
                    for (i, &g) in dy.iter().enumerate() {
                        let bi = mb.at(i);
                        let d = match kind {
                            OpKind::Add => g,
                            OpKind::Sub => -g,
                            OpKind::Mul => g * ad[ma.at(i)],
                            _ => -g * ad[ma.at(i)] / (bd[bi] * bd[bi]),
                        };
                        gb[bi] += d;
                    }
                    out.push((inputs[1], gb));
                }
            }
        }
        out
    }

    fn conv2d_vjp(&self, id: NodeId, dy: &[T], stride: usize, padding: usize) -> Vec<(NodeId, Vec<T>)> {
        let node = &self.nodes[id.0];
        let inputs = &node.op.inputs;
        let x = self.value(inputs[0]);
        let w = self.value(inputs[1]);
        let (batch, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (cout, k) = (w.shape()[0], w.shape()[2]);
        let out_shape = node.value.shape();
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
        let Saved::Columns(cols) = &node.saved else { unreachable!("conv2d saves its columns") };
        let ncols = batch * g.out_area();
        let dy_cm = conv::to_channel_major(dy, batch, cout, g.out_area());
        let mut out = Vec::new();
        if self.wants(inputs[0]) {
            let mut dcols = vec![T::ZERO; g.col_rows() * ncols];
            conv::matmul(Operand::transposed(w.data(), cout, g.col_rows()), Operand::plain(&dy_cm, cout, ncols), &mut dcols, false);
            out.push((inputs[0], conv::col2im(&dcols, batch, &g)));
        }
        if self.wants(inputs[1]) {
            let mut dw = vec![T::ZERO; w.numel()];
            conv::matmul(Operand::plain(&dy_cm, cout, ncols), Operand::transposed(cols, g.col_rows(), ncols), &mut dw, false);
            out.push((inputs[1], dw));
        }
        if let Some(&bias) = inputs.get(2) {
            if self.wants(bias) {
                out.push((bias, row_sums(&dy_cm, ncols)));
            }
        }
        out
    }

    fn conv_transpose2d_vjp(&self, id: NodeId, dy: &[T], stride: usize, padding: usize) -> Vec<(NodeId, Vec<T>)> {
        let node = &self.nodes[id.0];
        let inputs = &node.op.inputs;
        let x = self.value(inputs[0]);
        let w = self.value(inputs[1]);
        let (batch, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (cout, k) = (w.shape()[1], w.shape()[2]);
        let g = transposed_geometry(cout, h, wd, node.value.shape(), k, stride, padding);
        let Saved::Columns(x_cm) = &node.saved else { unreachable!("conv_transpose2d saves its input") };
        let in_area = h * wd;
        let ncols = batch * in_area;
        let dcols = conv::im2col(dy, batch, &g);
        let mut out = Vec::new();
        if self.wants(inputs[0]) {
            let mut dx_cm = vec![T::ZERO; cin * ncols];
            conv::matmul(Operand::plain(w.data(), cin, g.col_rows()), Operand::plain(&dcols, g.col_rows(), ncols), &mut dx_cm, false);
            out.push((inputs[0], conv::from_channel_major(&dx_cm, batch, cin, in_area)));
        }
        if self.wants(inputs[1]) {
            let mut dw = vec![T::ZERO; w.numel()];
            conv::matmul(Operand::plain(x_cm, cin, ncols), Operand::transposed(&dcols, g.col_rows(), ncols), &mut dw, false);
            out.push((inputs[1], dw));
        }
        if let Some(&bias) = inputs.get(2) {
            if self.wants(bias) {
                let area = g.in_h * g.in_w;
                let mut db = vec![T::ZERO; cout];
                for (plane, chunk) in dy.chunks(area).enumerate() {
                    db[plane % cout] += chunk.iter().copied().sum();
                }
                out.push((bias, db));
            }
        }
        out
    }

    fn batchnorm_vjp(&self, id: NodeId, dy: &[T], training: bool) -> Vec<(NodeId, Vec<T>)> {
        let node = &self.nodes[id.0];
        let inputs = &node.op.inputs;
        let x = self.value(inputs[0]);
        let gamma = self.value(inputs[1]).data();
        let Saved::BatchStats { mean, inv_std, .. } = &node.saved else { unreachable!("batchnorm saves statistics") };
        let (batch, channels) = (x.shape()[0], x.shape()[1]);
        let area = x.shape()[2] * x.shape()[3];
        let xd = x.data();
        let count = (batch * area) as f64;
        let mut dgamma = vec![T::ZERO; channels];
        let mut dbeta = vec![T::ZERO; channels];
        let mut dx = vec![T::ZERO; xd.len()];
        for c in 0..channels {
            let (m, is) = (mean[c].as_f64(), inv_std[c].as_f64());
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for b in 0..batch {
                let r = (b * channels + c) * area..(b * channels + c + 1) * area;
                for (&g, &v) in dy[r.clone()].iter().zip(&xd[r]) {
                    let g = g.as_f64();
                    sum_dy += g;
                    sum_dy_xhat += g * (v.as_f64() - m) * is;
                }
            }
            dgamma[c] = T::from_f64(sum_dy_xhat);
            dbeta[c] = T::from_f64(sum_dy);
            let gc = gamma[c].as_f64();
            for b in 0..batch {
                let r = (b * channels + c) * area..(b * channels + c + 1) * area;
                for ((o, &g), &v) in dx[r.clone()].iter_mut().zip(&dy[r.clone()]).zip(&xd[r]) {
                    let g = g.as_f64();
                    *o = T::from_f64(if training {
                        let xhat = (v.as_f64() - m) * is;
                        gc * is / count * (count * g - sum_dy - xhat * sum_dy_xhat)
                    } else {
                        g * gc * is
                    });
                }
            }
        }
        let mut out = Vec::new();
        if self.wants(inputs[0]) {
            out.push((inputs[0], dx));
        }
        if self.wants(inputs[1]) {
            out.push((inputs[1], dgamma));
        }
        if self.wants(inputs[2]) {
            out.push((inputs[2], dbeta));
        }
        out
    }
}

fn row_sums<T: Element>(m: &[T], ncols: usize) -> Vec<T> {
    m.chunks(ncols).map(|row| T::from_f64(row.iter().map(|v| v.as_f64()).sum())).collect()
}
