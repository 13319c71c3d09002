//! Forward and backward kernels for every [`OpKind`].
//!
//! All kernels operate on one example (no batch dimension). Convolutions are
//! stride 1 with zero padding 1, so spatial shapes are preserved; avgpool3x3
//! divides by 9 including padded positions.

use super::{Node, NodeId, OpKind, ParamId, Pass, Src};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn shape_err(node: usize, op: OpKind, msg: String) -> Error {
    Error::Shape {
        node,
        op: op.name(),
        msg,
    }
}

fn as_chw(node: usize, op: OpKind, t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        other => Err(shape_err(
            node,
            op,
            format!("expected a [C, H, W] tensor, got {other:?}"),
        )),
    }
}

pub(super) fn forward(
    node: &Node,
    id: NodeId,
    inputs: &[&Tensor],
    params: &[Tensor],
) -> Result<Tensor> {
    match node.op {
        OpKind::Linear => {
            let x = inputs[0];
            let w = &params[node.weight.expect("linear has a weight")];
            let [out_dim, in_dim] = w.shape() else {
                return Err(shape_err(
                    id,
                    node.op,
                    format!("weight must be 2-d, got {:?}", w.shape()),
                ));
            };
            if x.shape() != [*in_dim] {
                return Err(shape_err(
                    id,
                    node.op,
                    format!("input {:?} does not match weight [.., {in_dim}]", x.shape()),
                ));
            }
            let mut y = vec![0.0; *out_dim];
            if let Some(bid) = node.bias {
                y.copy_from_slice(params[bid].data());
            }
            let wd = w.data();
            let xd = x.data();
            for o in 0..*out_dim {
                let row = &wd[o * in_dim..(o + 1) * in_dim];
                let mut acc = 0.0;
                for (wv, xv) in row.iter().zip(xd) {
                    acc += wv * xv;
                }
                y[o] += acc;
            }
            Tensor::new(vec![*out_dim], y)
        }
        OpKind::Conv1x1 => {
            let x = inputs[0];
            let (c_in, h, w) = as_chw(id, node.op, x)?;
            let wt = &params[node.weight.expect("conv has a weight")];
            let [c_out, wc, 1, 1] = wt.shape() else {
                return Err(shape_err(
                    id,
                    node.op,
                    format!("weight must be [O, C, 1, 1], got {:?}", wt.shape()),
                ));
            };
            if *wc != c_in {
                return Err(shape_err(
                    id,
                    node.op,
                    format!("input has {c_in} channels, weight expects {wc}"),
                ));
            }
            let px = h * w;
            let mut y = vec![0.0; c_out * px];
            let xd = x.data();
            let wd = wt.data();
            for o in 0..*c_out {
                let yo = &mut y[o * px..(o + 1) * px];
                if let Some(bid) = node.bias {
                    let b = params[bid].data()[o];
                    yo.iter_mut().for_each(|v| *v = b);
                }
                for c in 0..c_in {
                    let k = wd[o * c_in + c];
                    let xc = &xd[c * px..(c + 1) * px];
                    for (yv, xv) in yo.iter_mut().zip(xc) {
                        *yv += k * xv;
                    }
                }
            }
            Tensor::new(vec![*c_out, h, w], y)
        }
        OpKind::Conv3x3 => {
            let x = inputs[0];
            let (c_in, h, w) = as_chw(id, node.op, x)?;
            let wt = &params[node.weight.expect("conv has a weight")];
            let [c_out, wc, 3, 3] = wt.shape() else {
                return Err(shape_err(
                    id,
                    node.op,
                    format!("weight must be [O, C, 3, 3], got {:?}", wt.shape()),
                ));
            };
            if *wc != c_in {
                return Err(shape_err(
                    id,
                    node.op,
                    format!("input has {c_in} channels, weight expects {wc}"),
                ));
            }
            let px = h * w;
            let mut y = vec![0.0; c_out * px];
            let xd = x.data();
            let wd = wt.data();
            for o in 0..*c_out {
                let bias = node.bias.map(|bid| params[bid].data()[o]).unwrap_or(0.0);
                for yy in 0..h {
                    for xx in 0..w {
                        let mut acc = bias;
                        for c in 0..c_in {
                            let xc = &xd[c * px..(c + 1) * px];
                            let wk = &wd[(o * c_in + c) * 9..(o * c_in + c) * 9 + 9];
                            for dy in 0..3usize {
                                let sy = yy as isize + dy as isize - 1;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                for dx in 0..3usize {
                                    let sx = xx as isize + dx as isize - 1;
                                    if sx < 0 || sx >= w as isize {
                                        continue;
                                    }
                                    acc += wk[dy * 3 + dx] * xc[sy as usize * w + sx as usize];
                                }
                            }
                        }
                        y[o * px + yy * w + xx] = acc;
                    }
                }
            }
            Tensor::new(vec![*c_out, h, w], y)
        }
        OpKind::AvgPool3x3 => {
            let x = inputs[0];
            let (c, h, w) = as_chw(id, node.op, x)?;
            let px = h * w;
            let xd = x.data();
            let mut y = vec![0.0; c * px];
            for ch in 0..c {
                let xc = &xd[ch * px..(ch + 1) * px];
                for yy in 0..h {
                    for xx in 0..w {
                        let mut acc = 0.0;
                        for dy in -1isize..=1 {
                            let sy = yy as isize + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for dx in -1isize..=1 {
                                let sx = xx as isize + dx;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                acc += xc[sy as usize * w + sx as usize];
                            }
                        }
                        y[ch * px + yy * w + xx] = acc / 9.0;
                    }
                }
            }
            Tensor::new(vec![c, h, w], y)
        }
        OpKind::Relu => {
            let x = inputs[0];
            let y = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
            Tensor::new(x.shape().to_vec(), y)
        }
        OpKind::Add => {
            let first = inputs[0];
            let mut y = first.data().to_vec();
            for t in &inputs[1..] {
                if t.shape() != first.shape() {
                    return Err(shape_err(
                        id,
                        node.op,
                        format!("operand shapes differ: {:?} vs {:?}", first.shape(), t.shape()),
                    ));
                }
                for (yv, tv) in y.iter_mut().zip(t.data()) {
                    *yv += tv;
                }
            }
            Tensor::new(first.shape().to_vec(), y)
        }
        OpKind::GlobalAvgPool => {
            let x = inputs[0];
            let (c, h, w) = as_chw(id, node.op, x)?;
            let px = (h * w) as f64;
            let xd = x.data();
            let y = (0..c)
                .map(|ch| xd[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / px)
                .collect();
            Tensor::new(vec![c], y)
        }
        OpKind::SumOutput => {
            let total = inputs[0].data().iter().sum();
            Ok(Tensor::scalar(total))
        }
        OpKind::SoftmaxXent => {
            let logits = inputs[0];
            let target = inputs[1];
            if logits.shape().len() != 1 {
                return Err(shape_err(
                    id,
                    node.op,
                    format!("logits must be 1-d, got {:?}", logits.shape()),
                ));
            }
            let t = target.item()? as usize;
            let z = logits.data();
            if t >= z.len() {
                return Err(Error::contract(format!(
                    "target class {t} outside 0..{}",
                    z.len()
                )));
            }
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            Ok(Tensor::scalar(lse - z[t]))
        }
        OpKind::Mse => {
            let pred = inputs[0];
            let target = inputs[1];
            if pred.shape() != target.shape() {
                return Err(shape_err(
                    id,
                    node.op,
                    format!(
                        "prediction {:?} and target {:?} shapes differ",
                        pred.shape(),
                        target.shape()
                    ),
                ));
            }
            let loss = pred
                .data()
                .iter()
                .zip(target.data())
                .map(|(p, t)| 0.5 * (p - t) * (p - t))
                .sum();
            Ok(Tensor::scalar(loss))
        }
    }
}

pub(super) struct BackwardCtx<'a> {
    pub node: &'a Node,
    pub node_id: NodeId,
    pub adjoint: &'a [f64],
    pub pass: &'a Pass,
    pub params: &'a [Tensor],
    pub target: Option<&'a Tensor>,
}

pub(super) struct Flows {
    /// One optional adjoint per node input, aligned with `node.inputs`.
    pub input_adjoints: Vec<Option<Vec<f64>>>,
    pub weight_grad: Option<(ParamId, Vec<f64>)>,
    pub bias_grad: Option<(ParamId, Vec<f64>)>,
}

impl<'a> BackwardCtx<'a> {
    /// Resolves an operand's forward value. `Zeros` operands materialize a
    /// fresh zero tensor.
    fn operand(&self, idx: usize) -> Result<OperandData<'a>> {
        match &self.node.inputs[idx] {
            Src::Node(id) => {
                let t = self.pass.value(*id).ok_or_else(|| {
                    Error::State(format!(
                        "node {} reads node {id} outside the recorded pass",
                        self.node_id
                    ))
                })?;
                Ok(OperandData::Borrowed(t))
            }
            Src::Input => Ok(OperandData::Borrowed(&self.pass.input)),
            Src::Target => Ok(OperandData::Borrowed(self.target.ok_or_else(|| {
                Error::State("pass recorded no target".into())
            })?)),
            Src::Zeros(shape) => Ok(OperandData::Owned(Tensor::zeros(shape))),
        }
    }

    /// Whether the input needs an adjoint (only node-to-node edges do).
    fn wants_adjoint(&self, idx: usize) -> bool {
        matches!(self.node.inputs[idx], Src::Node(_))
    }
}

pub(super) enum OperandData<'a> {
    Borrowed(&'a Tensor),
    Owned(Tensor),
}

impl OperandData<'_> {
    fn tensor(&self) -> &Tensor {
        match self {
            OperandData::Borrowed(t) => t,
            OperandData::Owned(t) => t,
        }
    }
}

pub(super) fn backward(ctx: &BackwardCtx) -> Result<Flows> {
    let node = ctx.node;
    let adj = ctx.adjoint;
    let none_flows = |n: usize| vec![None; n];
    match node.op {
        OpKind::Linear => {
            let x_op = ctx.operand(0)?;
            let x = x_op.tensor();
            let w = &ctx.params[node.weight.expect("linear has a weight")];
            let (out_dim, in_dim) = (w.shape()[0], w.shape()[1]);
            let xd = x.data();
            let wd = w.data();
            let mut dx = vec![0.0; in_dim];
            let mut dw = vec![0.0; out_dim * in_dim];
            for o in 0..out_dim {
                let a = adj[o];
                let row = &wd[o * in_dim..(o + 1) * in_dim];
                let drow = &mut dw[o * in_dim..(o + 1) * in_dim];
                for i in 0..in_dim {
                    dx[i] += a * row[i];
                    drow[i] = a * xd[i];
                }
            }
            Ok(Flows {
                input_adjoints: vec![ctx.wants_adjoint(0).then_some(dx)],
                weight_grad: node.weight.map(|pid| (pid, dw)),
                bias_grad: node.bias.map(|pid| (pid, adj.to_vec())),
            })
        }
        OpKind::Conv1x1 => {
            let x_op = ctx.operand(0)?;
            let x = x_op.tensor();
            let (c_in, h, w) = match x.shape() {
                [c, h, w] => (*c, *h, *w),
                _ => unreachable!("validated in forward"),
            };
            let wt = &ctx.params[node.weight.expect("conv has a weight")];
            let c_out = wt.shape()[0];
            let px = h * w;
            let xd = x.data();
            let wd = wt.data();
            let mut dx = vec![0.0; c_in * px];
            let mut dw = vec![0.0; c_out * c_in];
            let mut db = vec![0.0; c_out];
            for o in 0..c_out {
                let ao = &adj[o * px..(o + 1) * px];
                db[o] = ao.iter().sum();
                for c in 0..c_in {
                    let k = wd[o * c_in + c];
                    let xc = &xd[c * px..(c + 1) * px];
                    let dxc = &mut dx[c * px..(c + 1) * px];
                    let mut acc = 0.0;
                    for p in 0..px {
                        dxc[p] += ao[p] * k;
                        acc += ao[p] * xc[p];
                    }
                    dw[o * c_in + c] = acc;
                }
            }
            Ok(Flows {
                input_adjoints: vec![ctx.wants_adjoint(0).then_some(dx)],
                weight_grad: node.weight.map(|pid| (pid, dw)),
                bias_grad: node.bias.map(|pid| (pid, db)),
            })
        }
        OpKind::Conv3x3 => {
            let x_op = ctx.operand(0)?;
            let x = x_op.tensor();
            let (c_in, h, w) = match x.shape() {
                [c, h, w] => (*c, *h, *w),
                _ => unreachable!("validated in forward"),
            };
            let wt = &ctx.params[node.weight.expect("conv has a weight")];
            let c_out = wt.shape()[0];
            let px = h * w;
            let xd = x.data();
            let wd = wt.data();
            let mut dx = vec![0.0; c_in * px];
            let mut dw = vec![0.0; c_out * c_in * 9];
            let mut db = vec![0.0; c_out];
            for o in 0..c_out {
                let ao = &adj[o * px..(o + 1) * px];
                db[o] = ao.iter().sum();
                for yy in 0..h {
                    for xx in 0..w {
                        let a = ao[yy * w + xx];
                        if a == 0.0 {
                            continue;
                        }
                        for c in 0..c_in {
                            let xc = &xd[c * px..(c + 1) * px];
                            let dxc_base = c * px;
                            let wbase = (o * c_in + c) * 9;
                            for dy in 0..3usize {
                                let sy = yy as isize + dy as isize - 1;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                for dxk in 0..3usize {
                                    let sx = xx as isize + dxk as isize - 1;
                                    if sx < 0 || sx >= w as isize {
                                        continue;
                                    }
                                    let src = sy as usize * w + sx as usize;
                                    dw[wbase + dy * 3 + dxk] += a * xc[src];
                                    dx[dxc_base + src] += a * wd[wbase + dy * 3 + dxk];
                                }
                            }
                        }
                    }
                }
            }
            Ok(Flows {
                input_adjoints: vec![ctx.wants_adjoint(0).then_some(dx)],
                weight_grad: node.weight.map(|pid| (pid, dw)),
                bias_grad: node.bias.map(|pid| (pid, db)),
            })
        }
        OpKind::AvgPool3x3 => {
            let out_shape = &node.out_shape;
            let (c, h, w) = (out_shape[0], out_shape[1], out_shape[2]);
            let px = h * w;
            let mut dx = vec![0.0; c * px];
            for ch in 0..c {
                let ac = &adj[ch * px..(ch + 1) * px];
                let dxc = &mut dx[ch * px..(ch + 1) * px];
                for yy in 0..h {
                    for xx in 0..w {
                        let a = ac[yy * w + xx] / 9.0;
                        if a == 0.0 {
                            continue;
                        }
                        for dy in -1isize..=1 {
                            let sy = yy as isize + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for dxk in -1isize..=1 {
                                let sx = xx as isize + dxk;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                dxc[sy as usize * w + sx as usize] += a;
                            }
                        }
                    }
                }
            }
            Ok(Flows {
                input_adjoints: vec![ctx.wants_adjoint(0).then_some(dx)],
                weight_grad: None,
                bias_grad: None,
            })
        }
        OpKind::Relu => {
            // Subgradient at exactly zero is zero.
            let x_op = ctx.operand(0)?;
            let dx = x_op
                .tensor()
                .data()
                .iter()
                .zip(adj)
                .map(|(&v, &a)| if v > 0.0 { a } else { 0.0 })
                .collect();
            Ok(Flows {
                input_adjoints: vec![ctx.wants_adjoint(0).then_some(dx)],
                weight_grad: None,
                bias_grad: None,
            })
        }
        OpKind::Add => {
            let input_adjoints = (0..node.inputs.len())
                .map(|i| ctx.wants_adjoint(i).then(|| adj.to_vec()))
                .collect();
            Ok(Flows {
                input_adjoints,
                weight_grad: None,
                bias_grad: None,
            })
        }
        OpKind::GlobalAvgPool => {
            if !ctx.wants_adjoint(0) {
                return Ok(Flows {
                    input_adjoints: none_flows(1),
                    weight_grad: None,
                    bias_grad: None,
                });
            }
            let x_op = ctx.operand(0)?;
            let (c, h, w) = match x_op.tensor().shape() {
                [c, h, w] => (*c, *h, *w),
                _ => unreachable!("validated in forward"),
            };
            let scale = 1.0 / (h * w) as f64;
            let mut dx = vec![0.0; c * h * w];
            for ch in 0..c {
                let a = adj[ch] * scale;
                dx[ch * h * w..(ch + 1) * h * w]
                    .iter_mut()
                    .for_each(|v| *v = a);
            }
            Ok(Flows {
                input_adjoints: vec![Some(dx)],
                weight_grad: None,
                bias_grad: None,
            })
        }
        OpKind::SumOutput => {
            if !ctx.wants_adjoint(0) {
                return Ok(Flows {
                    input_adjoints: none_flows(1),
                    weight_grad: None,
                    bias_grad: None,
                });
            }
            let x_op = ctx.operand(0)?;
            let dx = vec![adj[0]; x_op.tensor().numel()];
            Ok(Flows {
                input_adjoints: vec![Some(dx)],
                weight_grad: None,
                bias_grad: None,
            })
        }
        OpKind::SoftmaxXent => {
            let logits = ctx.operand(0)?;
            let t = ctx.operand(1)?.tensor().item()? as usize;
            let z = logits.tensor().data();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = z.iter().map(|v| (v - m).exp()).sum();
            let a = adj[0];
            let dx = z
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    let p = (v - m).exp() / denom;
                    a * (p - if k == t { 1.0 } else { 0.0 })
                })
                .collect();
            Ok(Flows {
                input_adjoints: vec![ctx.wants_adjoint(0).then_some(dx), None],
                weight_grad: None,
                bias_grad: None,
            })
        }
        OpKind::Mse => {
            let pred = ctx.operand(0)?;
            let target = ctx.operand(1)?;
            let a = adj[0];
            let dx = pred
                .tensor()
                .data()
                .iter()
                .zip(target.tensor().data())
                .map(|(p, t)| a * (p - t))
                .collect();
            Ok(Flows {
                input_adjoints: vec![ctx.wants_adjoint(0).then_some(dx), None],
                weight_grad: None,
                bias_grad: None,
            })
        }
    }
}
