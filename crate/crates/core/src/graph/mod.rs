//! Operation graphs with reverse-mode differentiation.
//!
//! A [`Graph`] is a topologically ordered list of operation nodes over a
//! shared parameter store. Running [`Graph::forward`] produces a [`Pass`]
//! holding every intermediate activation; [`Graph::backward`] replays the
//! nodes in exact reverse order to produce one gradient per trainable
//! parameter. A graph is read-only during a pass, so independent passes over
//! the same graph may run on different threads.

mod builder;
mod gradcheck;
mod ops;

pub use builder::GraphBuilder;
pub use gradcheck::grad_check;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type NodeId = usize;
pub type ParamId = usize;

/// The operation vocabulary. Every kind has a forward rule and an exact
/// backward rule in `ops`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Linear,
    Conv1x1,
    Conv3x3,
    AvgPool3x3,
    Relu,
    Add,
    GlobalAvgPool,
    SumOutput,
    SoftmaxXent,
    Mse,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Linear => "linear",
            OpKind::Conv1x1 => "conv1x1",
            OpKind::Conv3x3 => "conv3x3",
            OpKind::AvgPool3x3 => "avgpool3x3",
            OpKind::Relu => "relu",
            OpKind::Add => "add",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::SumOutput => "sum_output",
            OpKind::SoftmaxXent => "softmax_xent",
            OpKind::Mse => "mse",
        }
    }
}

/// Where a node draws an operand from.
#[derive(Debug, Clone, PartialEq)]
pub enum Src {
    /// The graph input supplied to `forward`.
    Input,
    /// The target supplied alongside the input (loss nodes only).
    Target,
    /// A structurally zero tensor of the given shape.
    Zeros(Vec<usize>),
    /// The output of an earlier node.
    Node(NodeId),
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: OpKind,
    pub inputs: Vec<Src>,
    pub weight: Option<ParamId>,
    pub bias: Option<ParamId>,
    pub out_shape: Vec<usize>,
}

/// How parameters are initialized by [`Graph::init_params`].
#[derive(Debug, Clone, Copy)]
pub enum ParamKind {
    /// Gaussian with standard deviation `sqrt(2 / fan_in)`.
    Weight { fan_in: usize },
    /// Zero-initialized.
    Bias,
    /// Left exactly as constructed (fixture-provided values).
    Fixed,
}

/// What the loss node, if any, expects as target.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    None,
    /// Dense target of the given shape (MSE).
    Value(Vec<usize>),
    /// One class index in `0..classes`, passed as a one-element tensor.
    Class(usize),
}

static GRAPH_STAMP: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<Tensor>,
    param_kinds: Vec<ParamKind>,
    input_shape: Vec<usize>,
    target: TargetSpec,
    /// Prediction node: the last node before any loss node.
    pred: NodeId,
    /// Scalar loss node, when the graph carries one.
    loss: Option<NodeId>,
    stamp: u64,
}

/// Activations recorded by a forward pass, consumed by `backward`.
#[derive(Debug)]
pub struct Pass {
    values: Vec<Option<Tensor>>,
    input: Tensor,
    target: Option<Tensor>,
    /// Node whose value is the pass output (pred or loss).
    output: NodeId,
    stamp: u64,
}

impl Pass {
    pub fn output(&self) -> &Tensor {
        self.values[self.output]
            .as_ref()
            .expect("output node is always evaluated")
    }

    pub fn value(&self, node: NodeId) -> Option<&Tensor> {
        self.values.get(node).and_then(|v| v.as_ref())
    }

    pub fn output_node(&self) -> NodeId {
        self.output
    }
}

/// One gradient tensor per parameter id; `None` for frozen parameters.
#[derive(Debug, Clone)]
pub struct GradientMap {
    grads: Vec<Option<Tensor>>,
}

impl GradientMap {
    pub fn get(&self, param: ParamId) -> Option<&Tensor> {
        self.grads.get(param).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Concatenates the gradients of all trainable parameters in id order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in self.grads.iter().flatten() {
            out.extend_from_slice(g.data());
        }
        out
    }

    /// a*self + b*other, parameterwise.
    pub fn linear_comb(&self, a: f64, other: &GradientMap, b: f64) -> Result<GradientMap> {
        if self.grads.len() != other.grads.len() {
            return Err(Error::contract("gradient maps cover different parameters"));
        }
        let grads = self
            .grads
            .iter()
            .zip(&other.grads)
            .map(|(x, y)| match (x, y) {
                (Some(x), Some(y)) => {
                    let data = x
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(xv, yv)| a * xv + b * yv)
                        .collect();
                    Some(Tensor::new(x.shape().to_vec(), data).expect("same shape"))
                }
                _ => None,
            })
            .collect();
        Ok(GradientMap { grads })
    }
}

impl Graph {
    pub(crate) fn from_parts(
        nodes: Vec<Node>,
        params: Vec<Tensor>,
        param_kinds: Vec<ParamKind>,
        input_shape: Vec<usize>,
        target: TargetSpec,
        pred: NodeId,
        loss: Option<NodeId>,
    ) -> Self {
        Graph {
            nodes,
            params,
            param_kinds,
            input_shape,
            target,
            pred,
            loss,
            stamp: GRAPH_STAMP.fetch_add(1, Ordering::Relaxed),
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn target_spec(&self) -> &TargetSpec {
        &self.target
    }

    pub fn pred_node(&self) -> NodeId {
        self.pred
    }

    pub fn loss_node(&self) -> Option<NodeId> {
        self.loss
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        &self.params[id]
    }

    /// Total number of trainable scalar parameters.
    pub fn trainable_len(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.requires_grad())
            .map(|p| p.numel())
            .sum()
    }

    /// Ids of trainable parameter tensors, in id order.
    pub fn trainable_ids(&self) -> Vec<ParamId> {
        (0..self.params.len())
            .filter(|&i| self.params[i].requires_grad())
            .collect()
    }

    /// Overwrites one parameter tensor's values (fixtures and tests).
    pub fn set_param_data(&mut self, id: ParamId, data: Vec<f64>) -> Result<()> {
        let p = self
            .params
            .get_mut(id)
            .ok_or_else(|| Error::contract(format!("no parameter {id}")))?;
        if data.len() != p.numel() {
            return Err(Error::contract(format!(
                "parameter {id} holds {} values, got {}",
                p.numel(),
                data.len()
            )));
        }
        p.data_mut().copy_from_slice(&data);
        Ok(())
    }

    /// Seeds every trainable parameter: weights from a fan-in-scaled Gaussian
    /// (stddev `sqrt(2 / fan_in)`), biases to zero. Deterministic per seed.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (p, kind) in self.params.iter_mut().zip(&self.param_kinds) {
            match kind {
                ParamKind::Weight { fan_in } => {
                    let std = (2.0 / *fan_in as f64).sqrt();
                    for v in p.data_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v = std * z;
                    }
                }
                ParamKind::Bias => p.data_mut().iter_mut().for_each(|v| *v = 0.0),
                ParamKind::Fixed => {}
            }
        }
    }

    fn run_forward(&self, input: &Tensor, target: Option<&Tensor>, end: NodeId) -> Result<Pass> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::Shape {
                node: 0,
                op: "input",
                msg: format!(
                    "graph expects input shape {:?}, got {:?}",
                    self.input_shape,
                    input.shape()
                ),
            });
        }
        if !input.is_finite() {
            return Err(Error::Numeric("non-finite graph input".into()));
        }
        if let (Some(t), TargetSpec::Class(classes)) = (target, &self.target) {
            let idx = t.item()?;
            if idx.fract() != 0.0 || idx < 0.0 || idx as usize >= *classes {
                return Err(Error::contract(format!(
                    "class target {idx} outside 0..{classes}"
                )));
            }
        }

        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for id in 0..=end {
            let node = &self.nodes[id];
            let mut zero_cache = Vec::new();
            let mut operands = Vec::with_capacity(node.inputs.len());
            // Two loops so zero tensors outlive the borrow below.
            for src in &node.inputs {
                if let Src::Zeros(shape) = src {
                    zero_cache.push(Tensor::zeros(shape));
                }
            }
            let mut zero_it = zero_cache.iter();
            for src in &node.inputs {
                let t = match src {
                    Src::Input => input,
                    Src::Target => target.ok_or_else(|| {
                        Error::State(format!(
                            "node {id} needs a target but none was supplied to forward"
                        ))
                    })?,
                    Src::Zeros(_) => zero_it.next().unwrap(),
                    Src::Node(n) => values[*n].as_ref().ok_or_else(|| {
                        Error::State(format!("node {id} reads node {n} before evaluation"))
                    })?,
                };
                operands.push(t);
            }
            let out = ops::forward(node, id, &operands, &self.params)?;
            if !out.is_finite() {
                return Err(Error::NonFinite {
                    node: id,
                    op: node.op.name(),
                });
            }
            values[id] = Some(out);
        }
        Ok(Pass {
            values,
            input: input.clone(),
            target: target.cloned(),
            output: end,
            stamp: self.stamp,
        })
    }

    /// Evaluates the graph up to its prediction node.
    pub fn forward(&self, input: &Tensor) -> Result<Pass> {
        self.run_forward(input, None, self.pred)
    }

    /// Evaluates the graph through its loss node.
    pub fn forward_with_target(&self, input: &Tensor, target: &Tensor) -> Result<Pass> {
        let loss = self
            .loss
            .ok_or_else(|| Error::State("graph has no loss node".into()))?;
        self.run_forward(input, Some(target), loss)
    }

    /// Gradient of the pass's scalar output with respect to every trainable
    /// parameter. The pass must come from this graph and hold a one-element
    /// output.
    pub fn backward(&self, pass: &Pass) -> Result<GradientMap> {
        let out = pass.output();
        if out.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        self.backward_seeded(pass, pass.output, &[1.0])
    }

    /// Backward pass from an arbitrary node with an explicit adjoint seed.
    pub fn backward_seeded(
        &self,
        pass: &Pass,
        seed_node: NodeId,
        seed: &[f64],
    ) -> Result<GradientMap> {
        if pass.stamp != self.stamp {
            return Err(Error::State(
                "pass was produced by a different graph".into(),
            ));
        }
        let seed_val = pass.values.get(seed_node).and_then(|v| v.as_ref());
        let seed_val = seed_val.ok_or_else(|| {
            Error::State(format!("node {seed_node} was not evaluated by the pass"))
        })?;
        if seed_val.numel() != seed.len() {
            return Err(Error::contract(format!(
                "seed length {} does not match node output length {}",
                seed.len(),
                seed_val.numel()
            )));
        }

        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adjoints[seed_node] = Some(seed.to_vec());
        let mut grads: Vec<Option<Tensor>> = self
            .params
            .iter()
            .map(|p| {
                if p.requires_grad() {
                    Some(Tensor::zeros(p.shape()))
                } else {
                    None
                }
            })
            .collect();

        for id in (0..=seed_node).rev() {
            let adj = match adjoints[id].take() {
                Some(a) => a,
                None => continue,
            };
            let node = &self.nodes[id];
            let ctx = ops::BackwardCtx {
                node,
                node_id: id,
                adjoint: &adj,
                pass,
                params: &self.params,
                target: pass.target.as_ref(),
            };
            let flows = ops::backward(&ctx)?;
            if let Some((pid, wgrad)) = flows.weight_grad {
                if let Some(slot) = grads[pid].as_mut() {
                    slot.accumulate_grad_free(&wgrad);
                }
            }
            if let Some((pid, bgrad)) = flows.bias_grad {
                if let Some(slot) = grads[pid].as_mut() {
                    slot.accumulate_grad_free(&bgrad);
                }
            }
            for (src, in_adj) in node.inputs.iter().zip(flows.input_adjoints) {
                let (Src::Node(nid), Some(in_adj)) = (src, in_adj) else {
                    continue;
                };
                match adjoints[*nid].as_mut() {
                    Some(acc) => {
                        for (a, d) in acc.iter_mut().zip(&in_adj) {
                            *a += d;
                        }
                    }
                    None => adjoints[*nid] = Some(in_adj),
                }
            }
        }

        for (pid, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient for parameter {pid}"
                    )));
                }
            }
        }
        Ok(GradientMap { grads })
    }

    /// Applies `w -= lr * grad` to every trainable parameter.
    pub fn sgd_step(&mut self, grads: &GradientMap, lr: f64) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::contract("gradient map does not match graph"));
        }
        for (p, g) in self.params.iter_mut().zip(&grads.grads) {
            if let Some(g) = g {
                for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                    *w -= lr * d;
                }
            }
        }
        Ok(())
    }
}

impl Tensor {
    /// Elementwise add without the length re-check (lengths are fixed by
    /// construction inside backward).
    fn accumulate_grad_free(&mut self, delta: &[f64]) {
        for (v, d) in self.data_mut().iter_mut().zip(delta) {
            *v += d;
        }
    }
}

#[cfg(test)]
mod tests;
