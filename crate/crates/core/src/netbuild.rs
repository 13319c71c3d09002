//! Lowers blueprints to initialized graphs and extracts per-example output
//! gradients, the raw material of the Gram matrix.
//!
//! Lowering conventions for chain cells:
//! - conv edges lower to relu -> conv (pre-activation), pool and skip edges
//!   stay raw, matching the benchmark cell convention;
//! - a cell node with no live incoming edge is structurally zero: skip/pool
//!   edges out of it are dropped (exactly zero), conv edges out of it keep
//!   their bias contribution by convolving a zero tensor;
//! - every cell is wrapped with an identity shortcut, so a degenerate cell
//!   passes the stem signal through unchanged.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{Blueprint, CellGenotype, EdgeOp, Head, InputSpec, Topology, EDGE_PAIRS};
use crate::error::{Error, Result};
use crate::graph::{Graph, GraphBuilder, Src, TargetSpec};
use crate::tensor::Tensor;

/// Which per-example scalar the gradient rows differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientMode {
    /// The per-example prediction scalar: the sum-layer output, or the
    /// target-class logit for classifier heads.
    Output,
    /// The per-example loss.
    Loss,
}

impl std::str::FromStr for GradientMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "output" => Ok(GradientMode::Output),
            "loss" => Ok(GradientMode::Loss),
            other => Err(Error::Parse(format!("unknown gradient mode {other:?}"))),
        }
    }
}

/// A scoring batch: `n` stacked examples with one scalar target each
/// (class index or regression value).
#[derive(Debug, Clone)]
pub struct Batch {
    inputs: Tensor,
    targets: Tensor,
    example_shape: Vec<usize>,
    n: usize,
}

impl Batch {
    /// `inputs` has shape `[n, ...]`, `targets` shape `[n]`. The split
    /// estimator needs two halves, so n >= 2.
    pub fn new(inputs: Tensor, targets: Tensor) -> Result<Self> {
        let shape = inputs.shape();
        if shape.len() < 2 {
            return Err(Error::contract(format!(
                "batch inputs need shape [n, ...], got {shape:?}"
            )));
        }
        let n = shape[0];
        if n < 2 {
            return Err(Error::contract(format!("batch needs n >= 2, got {n}")));
        }
        if targets.shape() != [n] {
            return Err(Error::contract(format!(
                "targets must have shape [{n}], got {:?}",
                targets.shape()
            )));
        }
        let example_shape = shape[1..].to_vec();
        Ok(Batch {
            inputs,
            targets,
            example_shape,
            n,
        })
    }

    pub fn from_examples(examples: &[Tensor], targets: &[f64]) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::contract("batch needs at least one example"));
        }
        let shape = examples[0].shape().to_vec();
        let mut data = Vec::with_capacity(examples.len() * examples[0].numel());
        for ex in examples {
            if ex.shape() != shape {
                return Err(Error::contract(format!(
                    "example shapes differ: {:?} vs {:?}",
                    shape,
                    ex.shape()
                )));
            }
            data.extend_from_slice(ex.data());
        }
        let mut full_shape = vec![examples.len()];
        full_shape.extend_from_slice(&shape);
        Batch::new(
            Tensor::new(full_shape, data)?,
            Tensor::from_vec(targets.to_vec()),
        )
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn example_shape(&self) -> &[usize] {
        &self.example_shape
    }

    pub fn example(&self, i: usize) -> Tensor {
        let len: usize = self.example_shape.iter().product();
        let data = self.inputs.data()[i * len..(i + 1) * len].to_vec();
        Tensor::new(self.example_shape.clone(), data).expect("shape fixed at construction")
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets.data()[i]
    }

    pub fn targets(&self) -> &Tensor {
        &self.targets
    }
}

/// An initialized network: the lowered graph plus its provenance.
#[derive(Debug, Clone)]
pub struct NetworkInstance {
    graph: Graph,
    blueprint: Blueprint,
    init_seed: u64,
    param_count: usize,
}

impl NetworkInstance {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn blueprint(&self) -> &Blueprint {
        &self.blueprint
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    /// Trainable scalar parameter count P.
    pub fn param_count(&self) -> usize {
        self.param_count
    }
}

/// Lowers a blueprint and draws its parameters: weights from a Gaussian with
/// standard deviation `sqrt(2 / fan_in)`, biases zero. Bitwise reproducible
/// per (blueprint, seed).
pub fn instantiate(blueprint: &Blueprint, seed: u64) -> Result<NetworkInstance> {
    let mut graph = lower(blueprint)?;
    graph.init_params(seed);
    let param_count = graph.trainable_len();
    Ok(NetworkInstance {
        graph,
        blueprint: blueprint.clone(),
        init_seed: seed,
        param_count,
    })
}

/// Lowers a blueprint to an uninitialized graph. Graphs are acyclic by
/// construction: nodes may only reference earlier nodes.
pub fn lower(blueprint: &Blueprint) -> Result<Graph> {
    match blueprint.topology {
        Topology::Chain => lower_chain(blueprint),
        Topology::Highway | Topology::Lookahead | Topology::Dense => lower_blocks(blueprint),
    }
}

fn attach_head(mut b: GraphBuilder, feat: Src, head: Head) -> Result<Graph> {
    match head {
        Head::Classifier { classes } => {
            let logits = b.linear(feat, classes)?;
            b.finish_with_xent(logits)
        }
        Head::Scalar => {
            let s = b.sum_output(feat)?;
            b.finish_with_mse(s)
        }
    }
}

fn lower_chain(blueprint: &Blueprint) -> Result<Graph> {
    let cell = blueprint
        .cell
        .ok_or_else(|| Error::contract("chain blueprint carries no cell genotype"))?;
    let InputSpec::Image { .. } = blueprint.input else {
        return Err(Error::contract(
            "chain topology needs an image input for its conv stem",
        ));
    };
    if blueprint.num_cells == 0 {
        return Err(Error::contract("chain blueprint needs at least one cell"));
    }

    let mut b = GraphBuilder::new(&blueprint.input.shape());
    let mut cur = b.conv3x3(b.input(), blueprint.width)?;
    for _ in 0..blueprint.num_cells {
        cur = lower_cell(&mut b, &cell, cur, blueprint.width)?;
    }
    let feat = b.global_avg_pool(cur)?;
    attach_head(b, feat, blueprint.head)
}

/// Lowers one cell over `input`, returning the shortcut-wrapped output.
fn lower_cell(
    b: &mut GraphBuilder,
    cell: &CellGenotype,
    input: Src,
    width: usize,
) -> Result<Src> {
    let stage_shape = b.shape_of(&input)?;
    // node_src[i]: None marks a structurally zero node.
    let mut node_src: [Option<Src>; 4] = [Some(input.clone()), None, None, None];
    for j in 1..4usize {
        let mut contributions = Vec::new();
        for (slot, &(i, jj)) in EDGE_PAIRS.iter().enumerate() {
            if jj != j {
                continue;
            }
            let op = cell.edges[slot];
            let feed = node_src[i].clone();
            match (op, feed) {
                (EdgeOp::None, _) => {}
                // Skip and pool are exactly zero on a zero node.
                (EdgeOp::Skip, None) | (EdgeOp::AvgPool3x3, None) => {}
                (EdgeOp::Skip, Some(src)) => contributions.push(src),
                (EdgeOp::AvgPool3x3, Some(src)) => contributions.push(b.avgpool3x3(src)?),
                // Conv on a zero node still contributes its bias map.
                (EdgeOp::Conv1x1, feed) => {
                    let src = feed.unwrap_or_else(|| b.zeros(&stage_shape));
                    let r = b.relu(src)?;
                    contributions.push(b.conv1x1(r, width)?);
                }
                (EdgeOp::Conv3x3, feed) => {
                    let src = feed.unwrap_or_else(|| b.zeros(&stage_shape));
                    let r = b.relu(src)?;
                    contributions.push(b.conv3x3(r, width)?);
                }
            }
        }
        node_src[j] = match contributions.len() {
            0 => None,
            1 => Some(contributions.pop().unwrap()),
            _ => Some(b.add(contributions)?),
        };
    }
    // Identity shortcut keeps degenerate cells well-posed.
    Ok(match node_src[3].take() {
        Some(out) => b.add(vec![out, input])?,
        None => input,
    })
}

fn lower_blocks(blueprint: &Blueprint) -> Result<Graph> {
    let InputSpec::Vector { .. } = blueprint.input else {
        return Err(Error::contract(
            "block topologies operate on vector inputs",
        ));
    };
    let layers = blueprint.layers_per_cell.ok_or_else(|| {
        Error::contract("block topologies need layers_per_cell")
    })?;
    if !crate::arch::LAYERS_PER_CELL_RANGE.contains(&layers) {
        return Err(Error::contract(format!(
            "layers_per_cell must lie in {:?}, got {layers}",
            crate::arch::LAYERS_PER_CELL_RANGE
        )));
    }
    if blueprint.num_cells == 0 {
        return Err(Error::contract("need at least one cell"));
    }
    let width = blueprint.width;

    let mut b = GraphBuilder::new(&blueprint.input.shape());
    let stem = {
        let l = b.linear(b.input(), width)?;
        b.relu(l)?
    };

    let block = |b: &mut GraphBuilder, x: Src| -> Result<Src> {
        let l = b.linear(x, width)?;
        b.relu(l)
    };

    let mut cell_outputs: Vec<Src> = Vec::with_capacity(blueprint.num_cells);
    let mut cur = stem.clone();
    for cell_idx in 0..blueprint.num_cells {
        let cell_input = match blueprint.topology {
            // Each dense cell consumes the stem plus all previous cells.
            Topology::Dense => {
                let mut feeds = vec![stem.clone()];
                feeds.extend(cell_outputs.iter().cloned());
                if feeds.len() == 1 {
                    feeds.pop().unwrap()
                } else {
                    b.add(feeds)?
                }
            }
            _ => cur.clone(),
        };

        // o_0 = cell input; inner chain o_1..o_{layers-1}; the final layer
        // aggregates per topology.
        let mut outputs = vec![cell_input.clone()];
        for _ in 1..layers {
            let next = block(&mut b, outputs.last().unwrap().clone())?;
            outputs.push(next);
        }
        let agg_input = match blueprint.topology {
            Topology::Lookahead => {
                // The last layer consumes every inner output.
                if outputs.len() == 1 {
                    outputs[0].clone()
                } else {
                    b.add(outputs.clone())?
                }
            }
            Topology::Highway => {
                // One connection from the cell entry to the last layer.
                let last = outputs.last().unwrap().clone();
                let first = outputs[0].clone();
                if outputs.len() == 1 {
                    last
                } else {
                    b.add(vec![first, last])?
                }
            }
            Topology::Dense | Topology::Chain => outputs.last().unwrap().clone(),
        };
        let cell_out = block(&mut b, agg_input)?;
        cell_outputs.push(cell_out.clone());
        cur = cell_out;
        let _ = cell_idx;
    }

    attach_head(b, cur, blueprint.head)
}

/// Per-example gradient rows: row `i` is the flattened gradient of example
/// `i`'s scalar (prediction or loss) with respect to every trainable
/// parameter, in parameter-id order.
#[derive(Debug, Clone)]
pub struct PerExampleGrads {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    /// (offset, len) of each trainable parameter tensor within a row.
    layer_spans: Vec<(usize, usize)>,
}

impl PerExampleGrads {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn layer_spans(&self) -> &[(usize, usize)] {
        &self.layer_spans
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, layer_spans: Vec<(usize, usize)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::contract("need at least one gradient row"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::contract("gradient rows have unequal lengths"));
        }
        let n = rows.len();
        let mut data = Vec::with_capacity(n * cols);
        for r in rows {
            data.extend_from_slice(&r);
        }
        Ok(PerExampleGrads {
            rows: n,
            cols,
            data,
            layer_spans,
        })
    }
}

fn layer_spans_of(graph: &Graph) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut offset = 0;
    for pid in graph.trainable_ids() {
        let len = graph.param(pid).numel();
        spans.push((offset, len));
        offset += len;
    }
    spans
}

/// Gradient row of one example against a graph.
fn example_row(graph: &Graph, x: &Tensor, target: f64, mode: GradientMode) -> Result<Vec<f64>> {
    let grads = match mode {
        GradientMode::Loss => {
            let t = match graph.target_spec() {
                TargetSpec::Class(_) => Tensor::scalar(target),
                TargetSpec::Value(shape) if shape == &[1usize] => Tensor::scalar(target),
                TargetSpec::Value(shape) => {
                    return Err(Error::contract(format!(
                        "loss mode needs scalar-valued targets, graph expects {shape:?}"
                    )))
                }
                TargetSpec::None => {
                    return Err(Error::contract(
                        "loss mode needs a graph with a loss node",
                    ))
                }
            };
            let pass = graph.forward_with_target(x, &t)?;
            graph.backward(&pass)?
        }
        GradientMode::Output => {
            let pass = graph.forward(x)?;
            let pred = graph.pred_node();
            let out_len = pass.output().numel();
            match graph.target_spec() {
                TargetSpec::Class(classes) => {
                    let idx = target as usize;
                    if target.fract() != 0.0 || idx >= *classes {
                        return Err(Error::contract(format!(
                            "class target {target} outside 0..{classes}"
                        )));
                    }
                    let mut seed = vec![0.0; out_len];
                    seed[idx] = 1.0;
                    graph.backward_seeded(&pass, pred, &seed)?
                }
                _ => {
                    if out_len != 1 {
                        return Err(Error::contract(format!(
                            "output mode needs a scalar per example; prediction has {out_len} elements"
                        )));
                    }
                    graph.backward_seeded(&pass, pred, &[1.0])?
                }
            }
        }
    };
    Ok(grads.flatten())
}

/// Computes the `n x P` gradient matrix by `n` independent backward passes
/// over the read-only graph. Rows are evaluated in parallel; results are
/// assembled in example order, so thread count never changes the output.
pub fn per_example_grads_for_graph(
    graph: &Graph,
    batch: &Batch,
    mode: GradientMode,
) -> Result<PerExampleGrads> {
    let rows: Vec<Vec<f64>> = (0..batch.len())
        .into_par_iter()
        .map(|i| example_row(graph, &batch.example(i), batch.target(i), mode))
        .collect::<Result<_>>()?;
    PerExampleGrads::from_rows(rows, layer_spans_of(graph))
}

/// [`per_example_grads_for_graph`] over a network instance.
pub fn per_example_output_grads(
    net: &NetworkInstance,
    batch: &Batch,
    mode: GradientMode,
) -> Result<PerExampleGrads> {
    per_example_grads_for_graph(net.graph(), batch, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch;
    use crate::graph::OpKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image_input() -> InputSpec {
        InputSpec::Image {
            channels: 3,
            height: 6,
            width: 6,
        }
    }

    fn chain_bp(cell: CellGenotype) -> Blueprint {
        Blueprint::chain(cell, image_input(), 6, 2, Head::Classifier { classes: 4 })
    }

    fn random_image(rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..3 * 6 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(vec![3, 6, 6], data).unwrap()
    }

    #[test]
    fn instantiation_is_bitwise_reproducible() {
        let bp = chain_bp(arch::CellGenotype::from_index(4_242).unwrap());
        let a = instantiate(&bp, 7).unwrap();
        let b = instantiate(&bp, 7).unwrap();
        assert_eq!(a.param_count(), b.param_count());
        for pid in 0..a.graph().num_params() {
            assert_eq!(a.graph().param(pid).data(), b.graph().param(pid).data());
        }
    }

    #[test]
    fn all_none_cell_passes_stem_through() {
        // A degenerate cell has no parameters, so nets with different cell
        // counts share the same stem/head draws and compute the same map.
        let bp1 = Blueprint::chain(
            CellGenotype::all_none(),
            image_input(),
            6,
            1,
            Head::Classifier { classes: 4 },
        );
        let bp3 = Blueprint::chain(
            CellGenotype::all_none(),
            image_input(),
            6,
            3,
            Head::Classifier { classes: 4 },
        );
        let n1 = instantiate(&bp1, 5).unwrap();
        let n3 = instantiate(&bp3, 5).unwrap();
        assert_eq!(n1.param_count(), n3.param_count());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_image(&mut rng);
        let y1 = n1.graph().forward(&x).unwrap();
        let y3 = n3.graph().forward(&x).unwrap();
        assert!(y1.output().is_finite());
        assert_eq!(y1.output().data(), y3.output().data());
    }

    #[test]
    fn mlp_parameter_count_matches_hand_count() {
        // 4 -> 8 -> 1 with biases: 4*8 + 8*1 weights + 8 + 1 biases = 49.
        let mut b = crate::graph::GraphBuilder::new(&[4]);
        let h = b.linear(b.input(), 8).unwrap();
        let h = b.relu(h).unwrap();
        let y = b.linear(h, 1).unwrap();
        let g = b.finish(y).unwrap();
        assert_eq!(g.trainable_len(), 4 * 8 + 8 + 8 + 1);
    }

    #[test]
    fn linear_model_rows_equal_inputs() {
        // y = w . x: the output-mode gradient row of example i is x_i.
        let mut b = crate::graph::GraphBuilder::new(&[4]);
        let w = Tensor::new(vec![1, 4], vec![0.1, -0.2, 0.3, 0.4]).unwrap();
        let y = b.linear_with(b.input(), w, None, true).unwrap();
        let s = b.sum_output(y).unwrap();
        let g = b.finish_with_mse(s).unwrap();

        let examples = [
            Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0]),
            Tensor::from_vec(vec![-1.0, 0.5, 0.0, 2.0]),
        ];
        let batch = Batch::from_examples(&examples, &[0.0, 0.0]).unwrap();
        let grads = per_example_grads_for_graph(&g, &batch, GradientMode::Output).unwrap();
        assert_eq!(grads.row(0), examples[0].data());
        assert_eq!(grads.row(1), examples[1].data());
    }

    #[test]
    fn duplicated_examples_give_identical_rows() {
        let bp = chain_bp(CellGenotype::from_index(9_001).unwrap());
        let net = instantiate(&bp, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_image(&mut rng);
        let batch = Batch::from_examples(&[x.clone(), x], &[2.0, 2.0]).unwrap();
        let grads = per_example_output_grads(&net, &batch, GradientMode::Output).unwrap();
        assert_eq!(grads.row(0), grads.row(1));
    }

    #[test]
    fn rows_match_finite_differences_of_per_example_scalar() {
        // Small scalar-head net so finite differences stay cheap.
        let mut b = crate::graph::GraphBuilder::new(&[4]);
        let h = b.linear(b.input(), 5).unwrap();
        let h = b.relu(h).unwrap();
        let y = b.linear(h, 1).unwrap();
        let s = b.sum_output(y).unwrap();
        let mut g = b.finish_with_mse(s).unwrap();
        g.init_params(11);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::from_vec((0..4).map(|_| rng.gen_range(0.1..1.0)).collect());
        let batch = Batch::from_examples(&[x.clone(), x.clone()], &[0.3, 0.3]).unwrap();
        let grads = per_example_grads_for_graph(&g, &batch, GradientMode::Output).unwrap();

        // Central differences of the prediction scalar, parameter by parameter.
        let eps = 1e-5;
        let mut flat_idx = 0;
        for pid in g.trainable_ids() {
            for i in 0..g.param(pid).numel() {
                let probe = |delta: f64, g: &mut Graph| -> f64 {
                    let mut data = g.param(pid).data().to_vec();
                    data[i] += delta;
                    g.set_param_data(pid, data).unwrap();
                    let out = g.forward(&x).unwrap().output().item().unwrap();
                    let mut data = g.param(pid).data().to_vec();
                    data[i] -= delta;
                    g.set_param_data(pid, data).unwrap();
                    out
                };
                let fp = probe(eps, &mut g);
                let fm = probe(-eps, &mut g);
                let numeric = (fp - fm) / (2.0 * eps);
                let analytic = grads.row(0)[flat_idx];
                let denom = analytic.abs().max(numeric.abs()).max(1e-12);
                assert!(
                    (analytic - numeric).abs() / denom <= 1e-5,
                    "param {pid}[{i}]: {analytic} vs {numeric}"
                );
                flat_idx += 1;
            }
        }
    }

    #[test]
    fn loss_rows_are_residual_times_output_rows() {
        let bp = Blueprint::chain(
            CellGenotype::from_index(700).unwrap(),
            image_input(),
            4,
            1,
            Head::Scalar,
        );
        let net = instantiate(&bp, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let examples: Vec<Tensor> = (0..3).map(|_| random_image(&mut rng)).collect();
        let targets = [0.5, -1.0, 2.0];
        let batch = Batch::from_examples(&examples, &targets).unwrap();

        let out_rows = per_example_output_grads(&net, &batch, GradientMode::Output).unwrap();
        let loss_rows = per_example_output_grads(&net, &batch, GradientMode::Loss).unwrap();
        for i in 0..batch.len() {
            let pred = net
                .graph()
                .forward(&batch.example(i))
                .unwrap()
                .output()
                .item()
                .unwrap();
            let residual = pred - targets[i];
            for (l, o) in loss_rows.row(i).iter().zip(out_rows.row(i)) {
                assert!(
                    (l - residual * o).abs() <= 1e-10,
                    "row {i}: {l} vs {} ({residual} * {o})",
                    residual * o
                );
            }
        }
    }

    #[test]
    fn output_mode_rejects_vector_predictions_without_classes() {
        let mut b = crate::graph::GraphBuilder::new(&[3]);
        let y = b.linear(b.input(), 2).unwrap();
        let g = b.finish_with_mse(y).unwrap();
        let batch = Batch::from_examples(
            &[Tensor::zeros(&[3]), Tensor::zeros(&[3])],
            &[0.0, 0.0],
        )
        .unwrap();
        assert!(matches!(
            per_example_grads_for_graph(&g, &batch, GradientMode::Output),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn lookahead_final_layer_consumes_all_inner_outputs() {
        for layers in [2usize, 5] {
            let bp = Blueprint {
                topology: Topology::Lookahead,
                input: InputSpec::Vector { dim: 4 },
                width: 4,
                num_cells: 1,
                cell: None,
                layers_per_cell: Some(layers),
                head: Head::Classifier { classes: 2 },
            };
            let g = lower(&bp).unwrap();
            let max_add_arity = g
                .nodes()
                .iter()
                .filter(|n| n.op == OpKind::Add)
                .map(|n| n.inputs.len())
                .max()
                .unwrap();
            assert_eq!(max_add_arity, layers);
        }
    }

    #[test]
    fn dense_third_cell_consumes_stem_plus_two_cells() {
        let bp = Blueprint {
            topology: Topology::Dense,
            input: InputSpec::Vector { dim: 4 },
            width: 4,
            num_cells: 3,
            cell: None,
            layers_per_cell: Some(2),
            head: Head::Scalar,
        };
        let g = lower(&bp).unwrap();
        let arities: Vec<usize> = g
            .nodes()
            .iter()
            .filter(|n| n.op == OpKind::Add)
            .map(|n| n.inputs.len())
            .collect();
        // Cell 2 consumes stem + cell 1; cell 3 consumes stem + cells 1, 2.
        assert_eq!(arities, vec![2, 3]);
    }

    #[test]
    fn highway_final_layer_takes_entry_and_last_inner() {
        let bp = Blueprint {
            topology: Topology::Highway,
            input: InputSpec::Vector { dim: 4 },
            width: 4,
            num_cells: 1,
            cell: None,
            layers_per_cell: Some(5),
            head: Head::Scalar,
        };
        let g = lower(&bp).unwrap();
        let arities: Vec<usize> = g
            .nodes()
            .iter()
            .filter(|n| n.op == OpKind::Add)
            .map(|n| n.inputs.len())
            .collect();
        assert_eq!(arities, vec![2]);
    }

    #[test]
    fn every_genotype_in_a_sample_lowers_and_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_image(&mut rng);
        for g in arch::sample_cells(33, 40).unwrap() {
            let net = instantiate(&chain_bp(g), 1).unwrap();
            let out = net.graph().forward(&x).unwrap();
            assert!(out.output().is_finite(), "genotype {g}");
        }
    }
}
