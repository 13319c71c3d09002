//! Gradient-flow simulation against the exponential convergence bound.
//!
//! Explicit Euler stands in for the continuous-time flow `w' = -dL/dw` under
//! the quadratic loss `L = sum_i 0.5 (y_i - y_i*)^2`. At each record point
//! the Gram matrix of per-example output gradients is recomputed, its
//! smallest eigenvalue recorded, and the squared error checked against
//! `exp(-lambda_bar * t) * loss(0)`, where `lambda_bar` is the running
//! minimum of the recorded eigenvalues (a conservative discrete surrogate
//! for the time-varying rate).

use crate::error::{Error, Result};
use crate::gram::{self, GramMatrix};
use crate::graph::{Graph, GradientMap, TargetSpec};
use crate::netbuild::{per_example_grads_for_graph, Batch, GradientMode, NetworkInstance};
use crate::tensor::Tensor;

/// Euler integration settings. With `step` unset, the stability guard
/// `1 / (10 * ||H(0)||_F)` is used.
#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub step: Option<f64>,
    pub horizon: f64,
    pub record_every: f64,
    pub max_steps: usize,
    pub spectral_cap: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            step: None,
            horizon: 1.0,
            record_every: 0.05,
            max_steps: 200_000,
            spectral_cap: gram::DEFAULT_SPECTRAL_CAP,
        }
    }
}

/// Recorded gradient-flow run. Lists share indices; `losses` holds the
/// squared error `||y* - y(t)||^2` and `bounds` the running-minimum bound
/// value `exp(-lambda_bar(t) * t) * losses[0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    pub times: Vec<f64>,
    pub losses: Vec<f64>,
    pub lambda_mins: Vec<f64>,
    pub bounds: Vec<f64>,
}

impl FlowTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with header `t,loss,lambda_min,bound`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,loss,lambda_min,bound\n");
        for i in 0..self.times.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.times[i], self.losses[i], self.lambda_mins[i], self.bounds[i]
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty trajectory csv".into()))?;
        if header.trim() != "t,loss,lambda_min,bound" {
            return Err(Error::Parse(format!(
                "unexpected trajectory header {header:?}"
            )));
        }
        let mut traj = FlowTrajectory {
            times: Vec::new(),
            losses: Vec::new(),
            lambda_mins: Vec::new(),
            bounds: Vec::new(),
        };
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::Parse(format!(
                    "trajectory line {} has {} fields",
                    lineno + 2,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad number {s:?} on line {}", lineno + 2)))
            };
            traj.times.push(parse(fields[0])?);
            traj.losses.push(parse(fields[1])?);
            traj.lambda_mins.push(parse(fields[2])?);
            traj.bounds.push(parse(fields[3])?);
        }
        if traj.times.is_empty() {
            return Err(Error::Parse("trajectory csv has no rows".into()));
        }
        Ok(traj)
    }
}

fn require_mse_scalar_head(graph: &Graph) -> Result<()> {
    match graph.target_spec() {
        TargetSpec::Value(shape) if shape == &[1usize] => Ok(()),
        other => Err(Error::contract(format!(
            "gradient flow needs a scalar MSE head, graph has {other:?}"
        ))),
    }
}

/// Sum of per-example loss gradients plus the batch squared error.
fn batch_gradient(graph: &Graph, batch: &Batch) -> Result<(GradientMap, f64)> {
    let mut total: Option<GradientMap> = None;
    let mut squared_err = 0.0;
    for i in 0..batch.len() {
        let x = batch.example(i);
        let t = Tensor::scalar(batch.target(i));
        let pass = graph.forward_with_target(&x, &t)?;
        squared_err += 2.0 * pass.output().item()?;
        let grads = graph.backward(&pass)?;
        total = Some(match total {
            None => grads,
            Some(acc) => acc.linear_comb(1.0, &grads, 1.0)?,
        });
    }
    Ok((total.expect("batch is non-empty"), squared_err))
}

fn spectral_summary(graph: &Graph, batch: &Batch, cap: usize) -> Result<(f64, f64)> {
    let grads = per_example_grads_for_graph(graph, batch, GradientMode::Output)?;
    let h = gram::gram(&grads)?;
    Ok((gram::lambda_min_capped(&h, cap)?, gram::fro_norm(&h)))
}

/// Integrates the flow and records the trajectory. The input graph is not
/// mutated; integration runs on a clone.
pub fn gradient_flow_graph(
    graph: &Graph,
    batch: &Batch,
    cfg: &FlowConfig,
) -> Result<FlowTrajectory> {
    require_mse_scalar_head(graph)?;
    if batch.len() > cfg.spectral_cap {
        return Err(Error::contract(format!(
            "batch of {} exceeds the spectral cap {}; subsample",
            batch.len(),
            cfg.spectral_cap
        )));
    }
    if cfg.horizon <= 0.0 || cfg.record_every <= 0.0 {
        return Err(Error::contract(
            "horizon and record_every must be positive",
        ));
    }

    let mut work = graph.clone();
    let (lambda0, fro0) = spectral_summary(&work, batch, cfg.spectral_cap)?;
    let step = match cfg.step {
        Some(s) if s > 0.0 => s,
        Some(s) => return Err(Error::contract(format!("step must be positive, got {s}"))),
        None => {
            if fro0 > 0.0 {
                1.0 / (10.0 * fro0)
            } else {
                return Err(Error::contract(
                    "H(0) vanishes; supply an explicit step",
                ));
            }
        }
    };
    let steps = (cfg.horizon / step).ceil() as usize;
    if steps > cfg.max_steps {
        return Err(Error::contract(format!(
            "{steps} Euler steps exceed max_steps = {}; raise the step or lower the horizon",
            cfg.max_steps
        )));
    }

    let (_, loss0) = batch_gradient(&work, batch)?;

    let mut traj = FlowTrajectory {
        times: vec![0.0],
        losses: vec![loss0],
        lambda_mins: vec![lambda0],
        bounds: vec![loss0],
    };
    let mut lambda_bar = lambda0;
    let mut next_record = cfg.record_every;

    for k in 1..=steps {
        let (grads, err_now) = batch_gradient(&work, batch)?;
        if err_now > 10.0 * loss0 && err_now > 0.0 {
            let t_prev = step * (k - 1) as f64;
            return Err(Error::Diverged(format!(
                "squared error grew from {loss0:.3e} to {err_now:.3e} at t = {t_prev:.4}; try a smaller step"
            )));
        }
        work.sgd_step(&grads, step)?;
        let t = step * k as f64;

        let due = t + 1e-12 >= next_record || k == steps;
        if !due {
            continue;
        }
        while next_record <= t + 1e-12 {
            next_record += cfg.record_every;
        }
        let (_, loss) = batch_gradient(&work, batch)?;
        let (lm, _) = spectral_summary(&work, batch, cfg.spectral_cap)?;
        lambda_bar = lambda_bar.min(lm);
        traj.times.push(t);
        traj.losses.push(loss);
        traj.lambda_mins.push(lm);
        traj.bounds.push((-lambda_bar * t).exp() * loss0);
    }
    Ok(traj)
}

pub fn gradient_flow(
    net: &NetworkInstance,
    batch: &Batch,
    cfg: &FlowConfig,
) -> Result<FlowTrajectory> {
    gradient_flow_graph(net.graph(), batch, cfg)
}

/// Outcome of verifying a trajectory against the exponential bound.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundReport {
    pub holds: bool,
    /// Smallest slack `bound + tolerance - loss` over the trajectory.
    pub min_margin: f64,
    pub violations: Vec<usize>,
    pub tolerance: f64,
}

/// Verifies `loss(t) <= exp(-lambda_bar(t) * t) * loss(0) + 1e-6 * loss(0)`
/// at every recorded point, recomputing the running-minimum rate from the
/// recorded eigenvalues.
pub fn check_bound(traj: &FlowTrajectory) -> BoundReport {
    let loss0 = traj.losses.first().copied().unwrap_or(0.0);
    let tolerance = 1e-6 * loss0;
    let mut lambda_bar = f64::INFINITY;
    let mut min_margin = f64::INFINITY;
    let mut violations = Vec::new();
    for i in 0..traj.times.len() {
        lambda_bar = lambda_bar.min(traj.lambda_mins[i]);
        let bound = (-lambda_bar * traj.times[i]).exp() * loss0;
        let margin = bound + tolerance - traj.losses[i];
        if margin < min_margin {
            min_margin = margin;
        }
        if margin < 0.0 {
            violations.push(i);
        }
    }
    BoundReport {
        holds: violations.is_empty(),
        min_margin,
        violations,
        tolerance,
    }
}

/// Spectral summaries `(lambda_min, fro_norm)` of `H(0)` per network,
/// erroring if any row violates `lambda_min <= ||H||_F`.
pub fn fnorm_bound_sweep(nets: &[NetworkInstance], batch: &Batch) -> Result<Vec<(f64, f64)>> {
    let mut rows = Vec::with_capacity(nets.len());
    for net in nets {
        let grads = per_example_grads_for_graph(net.graph(), batch, GradientMode::Output)?;
        let h: GramMatrix = gram::gram(&grads)?;
        let lm = gram::lambda_min(&h)?;
        let fro = gram::fro_norm(&h);
        if lm > fro + 1e-12 {
            return Err(Error::Numeric(format!(
                "spectral inequality violated: lambda_min {lm} > fro {fro}"
            )));
        }
        rows.push((lm, fro));
    }
    Ok(rows)
}
