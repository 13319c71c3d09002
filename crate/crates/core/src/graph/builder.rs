//! Incremental graph construction with build-time shape inference.

use super::{Graph, Node, NodeId, OpKind, ParamId, ParamKind, Src, TargetSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub struct GraphBuilder {
    nodes: Vec<Node>,
    params: Vec<Tensor>,
    param_kinds: Vec<ParamKind>,
    input_shape: Vec<usize>,
}

impl GraphBuilder {
    pub fn new(input_shape: &[usize]) -> Self {
        GraphBuilder {
            nodes: Vec::new(),
            params: Vec::new(),
            param_kinds: Vec::new(),
            input_shape: input_shape.to_vec(),
        }
    }

    pub fn input(&self) -> Src {
        Src::Input
    }

    pub fn zeros(&self, shape: &[usize]) -> Src {
        Src::Zeros(shape.to_vec())
    }

    pub fn shape_of(&self, src: &Src) -> Result<Vec<usize>> {
        match src {
            Src::Input => Ok(self.input_shape.clone()),
            Src::Zeros(s) => Ok(s.clone()),
            Src::Node(id) => Ok(self.nodes[*id].out_shape.clone()),
            Src::Target => Err(Error::contract(
                "targets have no shape until forward time",
            )),
        }
    }

    fn add_param(&mut self, tensor: Tensor, kind: ParamKind, trainable: bool) -> ParamId {
        let id = self.params.len();
        let mut t = tensor;
        t.set_requires_grad(trainable);
        self.params.push(t);
        self.param_kinds.push(kind);
        id
    }

    fn push_node(
        &mut self,
        op: OpKind,
        inputs: Vec<Src>,
        weight: Option<ParamId>,
        bias: Option<ParamId>,
        out_shape: Vec<usize>,
    ) -> Src {
        let id: NodeId = self.nodes.len();
        self.nodes.push(Node {
            op,
            inputs,
            weight,
            bias,
            out_shape,
        });
        Src::Node(id)
    }

    /// Fully connected layer with a fresh trainable weight and zero bias.
    pub fn linear(&mut self, x: Src, out_dim: usize) -> Result<Src> {
        let in_shape = self.shape_of(&x)?;
        let [in_dim] = in_shape[..] else {
            return Err(Error::contract(format!(
                "linear expects a 1-d input, got {in_shape:?}"
            )));
        };
        let w = self.add_param(
            Tensor::zeros(&[out_dim, in_dim]),
            ParamKind::Weight { fan_in: in_dim },
            true,
        );
        let b = self.add_param(Tensor::zeros(&[out_dim]), ParamKind::Bias, true);
        Ok(self.push_node(OpKind::Linear, vec![x], Some(w), Some(b), vec![out_dim]))
    }

    /// Fully connected layer with caller-provided values; `trainable` decides
    /// whether the parameters receive gradients and re-initialization.
    pub fn linear_with(
        &mut self,
        x: Src,
        weight: Tensor,
        bias: Option<Tensor>,
        trainable: bool,
    ) -> Result<Src> {
        let in_shape = self.shape_of(&x)?;
        let [out_dim, in_dim] = weight.shape() else {
            return Err(Error::contract("linear weight must be 2-d"));
        };
        let (out_dim, in_dim) = (*out_dim, *in_dim);
        if in_shape != [in_dim] {
            return Err(Error::contract(format!(
                "weight expects input [{in_dim}], source yields {in_shape:?}"
            )));
        }
        let kind = if trainable {
            ParamKind::Weight { fan_in: in_dim }
        } else {
            ParamKind::Fixed
        };
        let w = self.add_param(weight, kind, trainable);
        let b = bias.map(|b| {
            let kind = if trainable {
                ParamKind::Bias
            } else {
                ParamKind::Fixed
            };
            self.add_param(b, kind, trainable)
        });
        Ok(self.push_node(OpKind::Linear, vec![x], Some(w), b, vec![out_dim]))
    }

    pub fn conv1x1(&mut self, x: Src, out_channels: usize) -> Result<Src> {
        let in_shape = self.shape_of(&x)?;
        let [c, h, w] = in_shape[..] else {
            return Err(Error::contract(format!(
                "conv1x1 expects [C, H, W], got {in_shape:?}"
            )));
        };
        let wt = self.add_param(
            Tensor::zeros(&[out_channels, c, 1, 1]),
            ParamKind::Weight { fan_in: c },
            true,
        );
        let b = self.add_param(Tensor::zeros(&[out_channels]), ParamKind::Bias, true);
        Ok(self.push_node(
            OpKind::Conv1x1,
            vec![x],
            Some(wt),
            Some(b),
            vec![out_channels, h, w],
        ))
    }

    pub fn conv3x3(&mut self, x: Src, out_channels: usize) -> Result<Src> {
        let in_shape = self.shape_of(&x)?;
        let [c, h, w] = in_shape[..] else {
            return Err(Error::contract(format!(
                "conv3x3 expects [C, H, W], got {in_shape:?}"
            )));
        };
        let wt = self.add_param(
            Tensor::zeros(&[out_channels, c, 3, 3]),
            ParamKind::Weight { fan_in: c * 9 },
            true,
        );
        let b = self.add_param(Tensor::zeros(&[out_channels]), ParamKind::Bias, true);
        Ok(self.push_node(
            OpKind::Conv3x3,
            vec![x],
            Some(wt),
            Some(b),
            vec![out_channels, h, w],
        ))
    }

    /// conv3x3 with caller-provided kernel and optional bias.
    pub fn conv3x3_with(
        &mut self,
        x: Src,
        weight: Tensor,
        bias: Option<Tensor>,
        trainable: bool,
    ) -> Result<Src> {
        let in_shape = self.shape_of(&x)?;
        let [c, h, w] = in_shape[..] else {
            return Err(Error::contract(format!(
                "conv3x3 expects [C, H, W], got {in_shape:?}"
            )));
        };
        let [out_channels, wc, 3, 3] = weight.shape() else {
            return Err(Error::contract("conv3x3 weight must be [O, C, 3, 3]"));
        };
        let (out_channels, wc) = (*out_channels, *wc);
        if wc != c {
            return Err(Error::contract(format!(
                "weight expects {wc} input channels, source yields {c}"
            )));
        }
        let kind = if trainable {
            ParamKind::Weight { fan_in: c * 9 }
        } else {
            ParamKind::Fixed
        };
        let wt = self.add_param(weight, kind, trainable);
        let b = bias.map(|b| {
            let kind = if trainable {
                ParamKind::Bias
            } else {
                ParamKind::Fixed
            };
            self.add_param(b, kind, trainable)
        });
        Ok(self.push_node(
            OpKind::Conv3x3,
            vec![x],
            Some(wt),
            b,
            vec![out_channels, h, w],
        ))
    }

    pub fn avgpool3x3(&mut self, x: Src) -> Result<Src> {
        let in_shape = self.shape_of(&x)?;
        if in_shape.len() != 3 {
            return Err(Error::contract(format!(
                "avgpool3x3 expects [C, H, W], got {in_shape:?}"
            )));
        }
        Ok(self.push_node(OpKind::AvgPool3x3, vec![x], None, None, in_shape))
    }

    pub fn relu(&mut self, x: Src) -> Result<Src> {
        let shape = self.shape_of(&x)?;
        Ok(self.push_node(OpKind::Relu, vec![x], None, None, shape))
    }

    /// Elementwise sum of one or more same-shaped sources.
    pub fn add(&mut self, xs: Vec<Src>) -> Result<Src> {
        if xs.is_empty() {
            return Err(Error::contract("add needs at least one operand"));
        }
        let shape = self.shape_of(&xs[0])?;
        for x in &xs[1..] {
            let s = self.shape_of(x)?;
            if s != shape {
                return Err(Error::contract(format!(
                    "add operands disagree on shape: {shape:?} vs {s:?}"
                )));
            }
        }
        Ok(self.push_node(OpKind::Add, xs, None, None, shape))
    }

    pub fn global_avg_pool(&mut self, x: Src) -> Result<Src> {
        let in_shape = self.shape_of(&x)?;
        let [c, _, _] = in_shape[..] else {
            return Err(Error::contract(format!(
                "global_avg_pool expects [C, H, W], got {in_shape:?}"
            )));
        };
        Ok(self.push_node(OpKind::GlobalAvgPool, vec![x], None, None, vec![c]))
    }

    pub fn sum_output(&mut self, x: Src) -> Result<Src> {
        self.shape_of(&x)?;
        Ok(self.push_node(OpKind::SumOutput, vec![x], None, None, vec![1]))
    }

    fn node_id(src: &Src) -> Result<NodeId> {
        match src {
            Src::Node(id) => Ok(*id),
            _ => Err(Error::contract(
                "graph output must be an operation node",
            )),
        }
    }

    /// Seals the graph with `pred` as its output and no loss node.
    pub fn finish(self, pred: Src) -> Result<Graph> {
        let pred = Self::node_id(&pred)?;
        Ok(Graph::from_parts(
            self.nodes,
            self.params,
            self.param_kinds,
            self.input_shape,
            TargetSpec::None,
            pred,
            None,
        ))
    }

    /// Seals the graph, appending an MSE loss over `pred` against a dense
    /// target of the same shape.
    pub fn finish_with_mse(mut self, pred: Src) -> Result<Graph> {
        let pred_id = Self::node_id(&pred)?;
        let shape = self.shape_of(&pred)?;
        let loss = self.push_node(OpKind::Mse, vec![pred, Src::Target], None, None, vec![1]);
        let loss_id = Self::node_id(&loss)?;
        Ok(Graph::from_parts(
            self.nodes,
            self.params,
            self.param_kinds,
            self.input_shape,
            TargetSpec::Value(shape),
            pred_id,
            Some(loss_id),
        ))
    }

    /// Seals the graph, appending a softmax cross-entropy loss over 1-d
    /// logits against a class-index target.
    pub fn finish_with_xent(mut self, logits: Src) -> Result<Graph> {
        let pred_id = Self::node_id(&logits)?;
        let shape = self.shape_of(&logits)?;
        let [classes] = shape[..] else {
            return Err(Error::contract(format!(
                "softmax_xent expects 1-d logits, got {shape:?}"
            )));
        };
        let loss = self.push_node(
            OpKind::SoftmaxXent,
            vec![logits, Src::Target],
            None,
            None,
            vec![1],
        );
        let loss_id = Self::node_id(&loss)?;
        Ok(Graph::from_parts(
            self.nodes,
            self.params,
            self.param_kinds,
            self.input_shape,
            TargetSpec::Class(classes),
            pred_id,
            Some(loss_id),
        ))
    }
}
