//! Central finite-difference verification of analytic gradients.

use super::{Graph, Pass};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn scalar_output(graph: &Graph, input: &Tensor, target: Option<&Tensor>) -> Result<f64> {
    let pass: Pass = match target {
        Some(t) => graph.forward_with_target(input, t)?,
        None => graph.forward(input)?,
    };
    pass.output().item()
}

/// Compares analytic gradients against central finite differences over every
/// trainable parameter coordinate and returns the maximum relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
///
/// The graph's output (loss node when present, prediction otherwise) must be
/// scalar. For graphs with a loss node a target is required.
pub fn grad_check(
    graph: &Graph,
    input: &Tensor,
    target: Option<&Tensor>,
    eps: f64,
) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::contract(format!("eps must be positive, got {eps}")));
    }
    let mut work = graph.clone();
    if work.loss_node().is_some() && target.is_none() {
        return Err(Error::contract(
            "graph carries a loss node; grad_check needs a target",
        ));
    }

    let pass = match target {
        Some(t) => work.forward_with_target(input, t)?,
        None => work.forward(input)?,
    };
    if pass.output().numel() != 1 {
        return Err(Error::contract(format!(
            "grad_check needs a scalar output, got shape {:?}",
            pass.output().shape()
        )));
    }
    let analytic = work.backward(&pass)?;

    let mut max_rel = 0.0f64;
    for pid in work.trainable_ids() {
        let len = work.param(pid).numel();
        let grad = analytic
            .get(pid)
            .expect("trainable parameters always receive gradients")
            .data()
            .to_vec();
        for i in 0..len {
            let original = work.param(pid).data()[i];
            let bump = |v: f64, w: &mut Graph| -> Result<f64> {
                let mut data = w.param(pid).data().to_vec();
                data[i] = v;
                w.set_param_data(pid, data)?;
                scalar_output(w, input, target)
            };
            let f_plus = bump(original + eps, &mut work)?;
            let f_minus = bump(original - eps, &mut work)?;
            bump(original, &mut work)?;
            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let denom = grad[i].abs().max(numeric.abs()).max(1e-12);
            max_rel = max_rel.max((grad[i] - numeric).abs() / denom);
        }
    }
    Ok(max_rel)
}
