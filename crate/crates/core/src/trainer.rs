//! Short minibatch training and the fine-grained top-1 selector.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::CellGenotype;
use crate::data::Split;
use crate::error::{Error, Result};
use crate::graph::{Graph, GradientMap, TargetSpec};
use crate::netbuild::NetworkInstance;
use crate::seed::subseed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    SoftmaxXent,
    Mse,
}

/// Plain-SGD training settings; the 20-epoch default is the fine-grained
/// selection budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            lr: 0.1,
            batch_size: 16,
            seed: 0,
            objective: Objective::SoftmaxXent,
        }
    }
}

/// Per-epoch curves from one training run. For the MSE objective the
/// selection metric in `val_accuracy` is the negative validation loss, so
/// higher stays better.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCurve {
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub wall_time_secs: f64,
    pub diverged: bool,
}

impl EvalCurve {
    pub fn final_val_accuracy(&self) -> Option<f64> {
        self.val_accuracy.last().copied()
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.train_loss.last().copied()
    }
}

fn check_objective(graph: &Graph, objective: Objective) -> Result<()> {
    match (objective, graph.target_spec()) {
        (Objective::SoftmaxXent, TargetSpec::Class(_)) => Ok(()),
        (Objective::Mse, TargetSpec::Value(shape)) if shape == &[1usize] => Ok(()),
        (obj, spec) => Err(Error::contract(format!(
            "objective {obj:?} does not match the graph head {spec:?}"
        ))),
    }
}

fn example_target(label: usize) -> Tensor {
    Tensor::scalar(label as f64)
}

/// Mean loss and (for classifiers) accuracy over a split.
fn evaluate(graph: &Graph, split: &Split, objective: Objective) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for (ex, &label) in split.examples.iter().zip(&split.labels) {
        let t = example_target(label);
        let pass = graph.forward_with_target(ex, &t)?;
        loss_sum += pass.output().item()?;
        if objective == Objective::SoftmaxXent {
            let logits = pass
                .value(graph.pred_node())
                .expect("prediction evaluated")
                .data();
            let argmax = logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i)
                .expect("non-empty logits");
            if argmax == label {
                correct += 1;
            }
        }
    }
    let mean_loss = loss_sum / split.len() as f64;
    let metric = match objective {
        Objective::SoftmaxXent => correct as f64 / split.len() as f64,
        Objective::Mse => -mean_loss,
    };
    Ok((mean_loss, metric))
}

/// Plain SGD (no momentum, constant lr) for `cfg.epochs` epochs. The input
/// graph is cloned; updates within a run are strictly sequential, so a fixed
/// (seed, data order) reproduces the curve bitwise. A non-finite loss aborts
/// early with the partial curve flagged as diverged.
pub fn short_train_graph(
    graph: &Graph,
    train: &Split,
    val: &Split,
    cfg: &TrainConfig,
) -> Result<EvalCurve> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::contract("training and validation splits must be non-empty"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::contract("epochs and batch_size must be positive"));
    }
    if cfg.lr < 0.0 {
        return Err(Error::contract("learning rate must be non-negative"));
    }
    check_objective(graph, cfg.objective)?;

    let started = Instant::now();
    let mut work = graph.clone();
    let mut curve = EvalCurve {
        train_loss: Vec::with_capacity(cfg.epochs),
        val_accuracy: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::with_capacity(cfg.epochs),
        wall_time_secs: 0.0,
        diverged: false,
    };

    let mut order: Vec<usize> = (0..train.len()).collect();
    'epochs: for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, 20, epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads: Option<GradientMap> = None;
            for &idx in chunk {
                let t = example_target(train.labels[idx]);
                let pass = match work.forward_with_target(&train.examples[idx], &t) {
                    Ok(p) => p,
                    Err(Error::NonFinite { .. }) | Err(Error::Numeric(_)) => {
                        curve.diverged = true;
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                };
                let loss = pass.output().item()?;
                if !loss.is_finite() {
                    curve.diverged = true;
                    break 'epochs;
                }
                epoch_loss += loss;
                let g = match work.backward(&pass) {
                    Ok(g) => g,
                    Err(Error::Numeric(_)) => {
                        curve.diverged = true;
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                };
                grads = Some(match grads {
                    None => g,
                    Some(acc) => acc.linear_comb(1.0, &g, 1.0)?,
                });
            }
            let grads = grads.expect("chunks are non-empty");
            work.sgd_step(&grads, cfg.lr / chunk.len() as f64)?;
        }

        let (val_loss, metric) = match evaluate(&work, val, cfg.objective) {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) | Err(Error::Numeric(_)) => {
                curve.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        curve.train_loss.push(epoch_loss / train.len() as f64);
        curve.val_loss.push(val_loss);
        curve.val_accuracy.push(metric);
    }

    curve.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(curve)
}

pub fn short_train(
    net: &NetworkInstance,
    train: &Split,
    val: &Split,
    cfg: &TrainConfig,
) -> Result<EvalCurve> {
    short_train_graph(net.graph(), train, val, cfg)
}

/// Picks the candidate with the highest final validation accuracy. Ties
/// break toward the lower final train loss, then the canonical genotype
/// order. Diverged candidates are not viable.
pub fn top1_select(candidates: &[(CellGenotype, EvalCurve)]) -> Result<CellGenotype> {
    if candidates.is_empty() {
        return Err(Error::contract("top1_select needs at least one candidate"));
    }
    let lengths: Vec<usize> = candidates
        .iter()
        .filter(|(_, c)| !c.diverged)
        .map(|(_, c)| c.val_accuracy.len())
        .collect();
    if lengths.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::contract("candidate curves have unequal lengths"));
    }

    let mut best: Option<(&CellGenotype, f64, f64)> = None;
    for (genotype, curve) in candidates {
        if curve.diverged {
            continue;
        }
        let acc = curve
            .final_val_accuracy()
            .ok_or_else(|| Error::contract("candidate curve is empty"))?;
        let loss = curve
            .final_train_loss()
            .ok_or_else(|| Error::contract("candidate curve is empty"))?;
        let better = match &best {
            None => true,
            Some((g, best_acc, best_loss)) => {
                acc > *best_acc
                    || (acc == *best_acc && loss < *best_loss)
                    || (acc == *best_acc && loss == *best_loss && genotype.index() < g.index())
            }
        };
        if better {
            best = Some((genotype, acc, loss));
        }
    }
    best.map(|(g, _, _)| *g)
        .ok_or_else(|| Error::contract("no viable candidate: every curve diverged"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use rand::Rng;

    fn blob_split(n: usize, seed: u64) -> Split {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut examples = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % 2;
            let center = if label == 0 { -1.5 } else { 1.5 };
            let x = center + 0.5 * rng.gen_range(-1.0..1.0);
            let y = center + 0.5 * rng.gen_range(-1.0..1.0);
            examples.push(Tensor::from_vec(vec![x, y]));
            labels.push(label);
        }
        Split { examples, labels }
    }

    fn blob_mlp(seed: u64) -> Graph {
        let mut b = GraphBuilder::new(&[2]);
        let h = b.linear(b.input(), 8).unwrap();
        let h = b.relu(h).unwrap();
        let logits = b.linear(h, 2).unwrap();
        let mut g = b.finish_with_xent(logits).unwrap();
        g.init_params(seed);
        g
    }

    /// Full-batch logistic regression on the same data.
    fn logistic_oracle_accuracy(train: &Split, val: &Split) -> f64 {
        let mut w = [0.0f64; 2];
        let mut b = 0.0f64;
        for _ in 0..300 {
            let (mut gw, mut gb) = ([0.0f64; 2], 0.0f64);
            for (ex, &label) in train.examples.iter().zip(&train.labels) {
                let z = w[0] * ex.data()[0] + w[1] * ex.data()[1] + b;
                let p = 1.0 / (1.0 + (-z).exp());
                let err = p - label as f64;
                gw[0] += err * ex.data()[0];
                gw[1] += err * ex.data()[1];
                gb += err;
            }
            let scale = 0.5 / train.len() as f64;
            w[0] -= scale * gw[0];
            w[1] -= scale * gw[1];
            b -= scale * gb;
        }
        let mut correct = 0usize;
        for (ex, &label) in val.examples.iter().zip(&val.labels) {
            let z = w[0] * ex.data()[0] + w[1] * ex.data()[1] + b;
            if (z > 0.0) == (label == 1) {
                correct += 1;
            }
        }
        correct as f64 / val.len() as f64
    }

    #[test]
    fn zero_learning_rate_freezes_the_network() {
        let g = blob_mlp(1);
        let train = blob_split(32, 2);
        let val = blob_split(16, 3);
        let cfg = TrainConfig {
            epochs: 5,
            lr: 0.0,
            batch_size: 8,
            ..Default::default()
        };
        let curve = short_train_graph(&g, &train, &val, &cfg).unwrap();
        let first = curve.val_accuracy[0];
        assert!(curve.val_accuracy.iter().all(|&a| a == first));
    }

    #[test]
    fn separable_blobs_reach_95_percent() {
        let train = blob_split(64, 5);
        let val = blob_split(32, 6);
        let oracle = logistic_oracle_accuracy(&train, &val);
        assert!(oracle >= 0.99, "logistic oracle only reached {oracle}");

        let g = blob_mlp(7);
        let cfg = TrainConfig {
            epochs: 20,
            lr: 0.3,
            batch_size: 8,
            ..Default::default()
        };
        let curve = short_train_graph(&g, &train, &val, &cfg).unwrap();
        let acc = curve.final_val_accuracy().unwrap();
        assert!(acc >= 0.95, "trained accuracy {acc}");
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let g = blob_mlp(9);
        let train = blob_split(32, 10);
        let val = blob_split(16, 11);
        let cfg = TrainConfig {
            epochs: 6,
            lr: 0.2,
            batch_size: 4,
            ..Default::default()
        };
        let a = short_train_graph(&g, &train, &val, &cfg).unwrap();
        let b = short_train_graph(&g, &train, &val, &cfg).unwrap();
        assert_eq!(a.train_loss, b.train_loss);
        assert_eq!(a.val_accuracy, b.val_accuracy);
        assert_eq!(a.val_loss, b.val_loss);
        assert_eq!(a.diverged, b.diverged);
    }

    #[test]
    fn training_leaves_the_input_untouched() {
        let g = blob_mlp(13);
        let before: Vec<Vec<f64>> = (0..g.num_params())
            .map(|p| g.param(p).data().to_vec())
            .collect();
        let train = blob_split(16, 14);
        let val = blob_split(8, 15);
        let cfg = TrainConfig {
            epochs: 3,
            lr: 0.2,
            batch_size: 4,
            ..Default::default()
        };
        short_train_graph(&g, &train, &val, &cfg).unwrap();
        for p in 0..g.num_params() {
            assert_eq!(g.param(p).data(), before[p].as_slice());
        }
    }

    #[test]
    fn curves_have_sane_ranges() {
        let g = blob_mlp(17);
        let train = blob_split(32, 18);
        let val = blob_split(16, 19);
        let cfg = TrainConfig {
            epochs: 4,
            lr: 0.2,
            batch_size: 8,
            ..Default::default()
        };
        let curve = short_train_graph(&g, &train, &val, &cfg).unwrap();
        assert_eq!(curve.train_loss.len(), cfg.epochs);
        assert_eq!(curve.val_accuracy.len(), cfg.epochs);
        assert!(curve.val_accuracy.iter().all(|&a| (0.0..=1.0).contains(&a)));
        assert!(curve.train_loss.iter().all(|l| l.is_finite()));
        assert!(!curve.diverged);
    }

    fn fixed_curve(acc: f64, loss: f64) -> EvalCurve {
        EvalCurve {
            train_loss: vec![loss],
            val_accuracy: vec![acc],
            val_loss: vec![loss],
            wall_time_secs: 0.0,
            diverged: false,
        }
    }

    #[test]
    fn top1_selects_highest_accuracy() {
        let g1 = CellGenotype::from_index(5).unwrap();
        let g2 = CellGenotype::from_index(9).unwrap();
        assert_eq!(
            top1_select(&[(g1, fixed_curve(0.8, 0.5)), (g2, fixed_curve(0.9, 0.5))]).unwrap(),
            g2
        );
        assert_eq!(top1_select(&[(g1, fixed_curve(0.8, 0.5))]).unwrap(), g1);
    }

    #[test]
    fn top1_breaks_ties_by_train_loss_then_genotype() {
        let g1 = CellGenotype::from_index(100).unwrap();
        let g2 = CellGenotype::from_index(7).unwrap();
        // Same accuracy: lower final train loss wins.
        assert_eq!(
            top1_select(&[(g1, fixed_curve(0.9, 0.3)), (g2, fixed_curve(0.9, 0.6))]).unwrap(),
            g1
        );
        // Full tie: canonical genotype order wins.
        assert_eq!(
            top1_select(&[(g1, fixed_curve(0.9, 0.3)), (g2, fixed_curve(0.9, 0.3))]).unwrap(),
            g2
        );
    }

    #[test]
    fn top1_rejects_all_diverged() {
        let g1 = CellGenotype::from_index(3).unwrap();
        let mut c = fixed_curve(0.5, 0.5);
        c.diverged = true;
        let err = top1_select(&[(g1, c)]).unwrap_err();
        assert!(err.to_string().contains("no viable candidate"), "{err}");
    }

    #[test]
    fn objective_mismatch_is_rejected() {
        let g = blob_mlp(21);
        let train = blob_split(8, 22);
        let val = blob_split(8, 23);
        let cfg = TrainConfig {
            objective: Objective::Mse,
            ..Default::default()
        };
        assert!(matches!(
            short_train_graph(&g, &train, &val, &cfg),
            Err(Error::Contract(_))
        ));
    }
}
